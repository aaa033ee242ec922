/** Map-trajectory view: animated trip polylines over the flow heatmap.
 *
 * The heatmap layer shows either the observed frame at the displayed
 * interval or the forecast frame for the selected horizon; the top-5
 * attributed trips of a selected cell are overlaid colored by their
 * attribution sign. The map is an abstract SVG canvas in lon/lat space
 * (synthetic scenarios carry no basemap).
 */

import { select } from "d3-selection";
import { line } from "d3-shape";

import { flowShade, lonLatScales, phiClass } from "./scales";
import type { ViewState } from "./state";
import type {
  ClustersDoc,
  GridReportPayload,
  Meta,
  TrajectoryItem,
} from "./types";

export interface MapData {
  meta: Meta;
  heat: number[][] | null; // matrix backing the heatmap layer
  trajectories: TrajectoryItem[];
  clusters: ClustersDoc | null;
  overlay: OverlayTrip[];
}

export interface OverlayTrip {
  trip: string;
  phi: number;
  points: [number, number, number][];
}

/** Top-5 overlay polylines from a grid report plus the trip geometries. */
export function overlayFromReport(
  report: GridReportPayload,
  trips: Map<string, TrajectoryItem>,
): OverlayTrip[] {
  const out: OverlayTrip[] = [];
  for (const att of report.top) {
    const item = trips.get(String(att.player));
    if (item) {
      out.push({ trip: item.trip, phi: att.phi, points: item.points });
    }
  }
  return out;
}

export function renderMapView(
  container: HTMLElement,
  data: MapData,
  state: ViewState,
  onCellClick?: (row: number, col: number) => void,
  width = 640,
  height = 520,
): void {
  const { meta } = data;
  const { x, y } = lonLatScales(meta.bbox, width, height);
  const shade = flowShade(meta.flow_max);
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "map-view")
    .attr("viewBox", `0 0 ${width} ${height}`);

  const cellW = width / meta.cols;
  const cellH = height / meta.rows;
  const heatLayer = svg.append("g").attr("class", "heat-layer");
  for (let row = 0; row < meta.rows; row += 1) {
    for (let col = 0; col < meta.cols; col += 1) {
      const value = data.heat ? data.heat[row][col] : 0;
      heatLayer
        .append("rect")
        .attr("class", "heat-cell")
        .attr("data-row", row)
        .attr("data-col", col)
        .attr("data-value", value)
        .attr("x", col * cellW)
        .attr("y", height - (row + 1) * cellH)
        .attr("width", cellW)
        .attr("height", cellH)
        .attr("fill", shade(value))
        .on("click", () => onCellClick?.(row, col));
    }
  }

  if (data.clusters) {
    const proj = data.clusters.projection;
    const regionLayer = svg.append("g").attr("class", "region-layer");
    for (const [cid, rings] of Object.entries(data.clusters.regions)) {
      for (const ring of rings) {
        const path = ring
          .map(([px, py], i) => {
            const lon = px / proj.meters_per_deg_lon + proj.lon_center;
            const lat = py / proj.meters_per_deg_lat + proj.lat_center;
            return `${i === 0 ? "M" : "L"}${x(lon)},${y(lat)}`;
          })
          .join("");
        regionLayer
          .append("path")
          .attr("class", `region region-${cid}`)
          .attr("data-cluster", cid)
          .attr("d", path + "Z");
      }
    }
  }

  const toPath = line<[number, number, number]>()
    .x((p) => x(p[1]))
    .y((p) => y(p[2]));

  const trajLayer = svg.append("g").attr("class", "trajectory-layer");
  for (const item of data.trajectories) {
    trajLayer
      .append("path")
      .attr("class", "trajectory")
      .attr("data-trip", item.trip)
      .attr("d", toPath(item.points));
  }

  const overlayLayer = svg.append("g").attr("class", "overlay-layer");
  for (const trip of data.overlay) {
    overlayLayer
      .append("path")
      .attr("class", `trip-overlay ${phiClass(trip.phi)}`)
      .attr("data-trip", trip.trip)
      .attr("data-phi", trip.phi)
      .attr("d", toPath(trip.points));
  }

  if (state.selectedCell) {
    const [row, col] = state.selectedCell;
    svg
      .append("rect")
      .attr("class", "selected-cell")
      .attr("x", col * cellW)
      .attr("y", height - (row + 1) * cellH)
      .attr("width", cellW)
      .attr("height", cellH);
  }
}
