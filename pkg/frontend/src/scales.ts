/** Deterministic color scales derived from the /api/meta value ranges. */

import { scaleSequential, scaleLinear } from "d3-scale";
import { interpolateGreys, interpolateRdBu } from "d3-scale-chromatic";

export const POSITIVE_COLOR = "#c0392b"; // red: promotes the prediction
export const NEGATIVE_COLOR = "#2471a3"; // blue: suppresses it

/** Heatmap shade for observed/predicted flows: darker = heavier traffic. */
export function flowShade(flowMax: number): (value: number) => string {
  const scale = scaleSequential(interpolateGreys).domain([0, Math.max(1, flowMax)]);
  return (value: number) => scale(Math.max(0, Math.min(flowMax, value)));
}

/** Square-chart color: red = large flow, blue = small. */
export function squareColor(flowMax: number): (value: number) => string {
  const scale = scaleSequential((t) => interpolateRdBu(1 - t)).domain([
    0,
    Math.max(1, flowMax),
  ]);
  return (value: number) => scale(Math.max(0, Math.min(flowMax, value)));
}

/** Sign-to-color contract shared by trajectories, glyph lobes and columns. */
export function phiColor(phi: number): string {
  return phi >= 0 ? POSITIVE_COLOR : NEGATIVE_COLOR;
}

export function phiClass(phi: number): "pos" | "neg" {
  return phi >= 0 ? "pos" : "neg";
}

/** Pixel scale for a lon/lat extent preserving the bbox aspect. */
export function lonLatScales(
  bbox: [number, number, number, number],
  width: number,
  height: number,
) {
  const x = scaleLinear().domain([bbox[0], bbox[2]]).range([0, width]);
  const y = scaleLinear().domain([bbox[1], bbox[3]]).range([height, 0]);
  return { x, y };
}
