/** Radar glyphs: per-cluster forecast ring plus diverging attribution lobes.
 *
 * The outer line chart walks the 5 forecast points clockwise from north
 * (one dot per 10 minutes); the interpreted-horizon dot is highlighted.
 * The inner part draws two radial polygons over the 8 compass sectors:
 * positive attribution magnitudes in red, negative in blue, never netted.
 */

import { select, type Selection } from "d3-selection";

import { lonLatScales, NEGATIVE_COLOR, POSITIVE_COLOR } from "./scales";
import type { ClustersDoc, Glyph, GlyphsPayload, Meta } from "./types";

const SECTOR_COUNT = 8;
const FORECAST_POINTS = 5;

function polarPoint(angleDeg: number, radius: number): [number, number] {
  const rad = ((angleDeg - 90) * Math.PI) / 180; // 0 deg = north, clockwise
  return [radius * Math.cos(rad), radius * Math.sin(rad)];
}

/** Draw one glyph centered on (0,0) of the given group element. */
export function renderGlyph(
  group: Selection<SVGGElement, unknown, null, undefined>,
  glyph: Glyph,
  radius: number,
  forecastMax: number,
): void {
  const inner = radius * 0.55;
  const ringFloor = radius * 0.6;
  const span = Math.max(1e-9, forecastMax);

  const sectorMax = Math.max(
    1e-9,
    ...glyph.sectors.map((s) => Math.max(s.pos, s.neg)),
  );
  const lobe = (values: number[], cls: string, color: string) => {
    const pts = values
      .map((v, i) => polarPoint((360 / SECTOR_COUNT) * i, (inner * v) / sectorMax))
      .map(([px, py]) => `${px},${py}`)
      .join(" ");
    group
      .append("polygon")
      .attr("class", cls)
      .attr("points", pts)
      .attr("fill", color);
  };
  lobe(glyph.sectors.map((s) => s.pos), "sector-pos", POSITIVE_COLOR);
  lobe(glyph.sectors.map((s) => s.neg), "sector-neg", NEGATIVE_COLOR);

  if (glyph.degenerate) {
    group.append("circle").attr("class", "degenerate-marker").attr("r", 2);
  }

  const ringRadius = (value: number) =>
    ringFloor + ((radius - ringFloor) * Math.max(0, value)) / span;
  const ringPoints = glyph.forecast_points.map((value, i) =>
    polarPoint((360 / FORECAST_POINTS) * i, ringRadius(value)),
  );
  group
    .append("polygon")
    .attr("class", "forecast-line")
    .attr("points", ringPoints.map(([px, py]) => `${px},${py}`).join(" "));
  ringPoints.forEach(([px, py], i) => {
    const highlighted = i === glyph.highlighted - 1;
    group
      .append("circle")
      .attr("class", highlighted ? "forecast-point highlighted" : "forecast-point")
      .attr("data-horizon", i + 1)
      .attr("data-value", glyph.forecast_points[i])
      .attr("cx", px)
      .attr("cy", py)
      .attr("r", highlighted ? 4 : 2.5);
  });
}

/** Place one glyph at each cluster centroid over the map extent. */
export function renderGlyphLayer(
  container: HTMLElement,
  meta: Meta,
  clusters: ClustersDoc,
  payload: GlyphsPayload,
  onSelect?: (cluster: number) => void,
  width = 640,
  height = 520,
): void {
  const { x, y } = lonLatScales(meta.bbox, width, height);
  const proj = clusters.projection;
  const forecastMax = Math.max(
    1e-9,
    ...payload.glyphs.flatMap((g) => g.forecast_points),
  );
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "glyph-layer")
    .attr("viewBox", `0 0 ${width} ${height}`);
  for (const glyph of payload.glyphs) {
    const [px, py] = clusters.centroids[glyph.cluster];
    const lon = px / proj.meters_per_deg_lon + proj.lon_center;
    const lat = py / proj.meters_per_deg_lat + proj.lat_center;
    const group = svg
      .append("g")
      .attr("class", "glyph")
      .attr("data-cluster", glyph.cluster)
      .attr("transform", `translate(${x(lon)},${y(lat)})`)
      .on("click", () => onSelect?.(glyph.cluster));
    renderGlyph(group, glyph, 26, forecastMax);
  }
}

/** Magnified single glyph for the dashboard panel. */
export function renderMagnifiedGlyph(
  container: HTMLElement,
  glyph: Glyph,
  size = 220,
): void {
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "glyph-magnified")
    .attr("viewBox", `${-size / 2} ${-size / 2} ${size} ${size}`);
  const group = svg
    .append("g")
    .attr("class", "glyph")
    .attr("data-cluster", glyph.cluster);
  const forecastMax = Math.max(1e-9, ...glyph.forecast_points);
  renderGlyph(group, glyph, size * 0.42, forecastMax);
}
