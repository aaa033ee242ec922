/** Fine-grained grid view: square chart, parallel coordinates, trip table,
 * and the bi-directional lookback column chart.
 *
 * Every number rendered here is a field of an API payload; the view does no
 * attribution math of its own.
 */

import { select } from "d3-selection";
import { scaleLinear } from "d3-scale";
import { line } from "d3-shape";

import { phiClass, squareColor } from "./scales";
import type {
  ForecastPayload,
  FlowsPayload,
  GridReportPayload,
  Meta,
} from "./types";

export interface GridCells {
  cells: [number, number][]; // cells of the selected cluster
}

export function clusterCells(assignment: number[][], cluster: number): [number, number][] {
  const out: [number, number][] = [];
  assignment.forEach((rowValues, row) => {
    rowValues.forEach((value, col) => {
      if (value === cluster) {
        out.push([row, col]);
      }
    });
  });
  return out;
}

/** Square chart: the selected cluster's cells colored by current flow. */
export function renderSquareChart(
  container: HTMLElement,
  meta: Meta,
  flows: FlowsPayload,
  cells: [number, number][],
  selected: [number, number] | null,
  onSelect?: (row: number, col: number) => void,
  size = 280,
): void {
  const color = squareColor(meta.flow_max);
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "square-chart")
    .attr("viewBox", `0 0 ${size} ${size}`);
  const cellW = size / meta.cols;
  const cellH = size / meta.rows;
  const members = new Set(cells.map(([r, c]) => `${r},${c}`));
  for (let row = 0; row < meta.rows; row += 1) {
    for (let col = 0; col < meta.cols; col += 1) {
      const value = flows.inflow[row][col];
      const inCluster = members.has(`${row},${col}`);
      const isSelected = selected !== null && selected[0] === row && selected[1] === col;
      let cls = inCluster ? "square-cell" : "square-cell dimmed";
      if (isSelected) {
        cls += " selected";
      }
      svg
        .append("rect")
        .attr("class", cls)
        .attr("data-row", row)
        .attr("data-col", col)
        .attr("data-value", value)
        .attr("x", col * cellW)
        .attr("y", size - (row + 1) * cellH)
        .attr("width", cellW)
        .attr("height", cellH)
        .attr("fill", color(value))
        .on("click", () => {
          if (inCluster) {
            onSelect?.(row, col);
          }
        });
    }
  }
}

/** Parallel coordinates: one 6-point predicted-inflow series per cell. */
export function renderParallelCoordinates(
  container: HTMLElement,
  meta: Meta,
  forecast: ForecastPayload,
  cells: [number, number][],
  selected: [number, number] | null,
  width = 420,
  height = 200,
): void {
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "parallel-coordinates")
    .attr("viewBox", `0 0 ${width} ${height}`);
  const horizons = forecast.frames.length;
  const xScale = scaleLinear().domain([1, horizons]).range([30, width - 10]);
  let maxValue = 1e-9;
  for (const frame of forecast.frames) {
    for (const [row, col] of cells) {
      maxValue = Math.max(maxValue, frame.inflow[row][col]);
    }
  }
  const yScale = scaleLinear().domain([0, maxValue]).range([height - 15, 10]);
  const color = squareColor(meta.flow_max);
  const toPath = line<[number, number]>()
    .x((d) => xScale(d[0]))
    .y((d) => yScale(d[1]));

  for (let h = 1; h <= horizons; h += 1) {
    svg
      .append("line")
      .attr("class", "pc-axis")
      .attr("x1", xScale(h))
      .attr("x2", xScale(h))
      .attr("y1", 10)
      .attr("y2", height - 15);
  }

  for (const [row, col] of cells) {
    const series: [number, number][] = forecast.frames.map((frame) => [
      frame.h,
      frame.inflow[row][col],
    ]);
    const isSelected = selected !== null && selected[0] === row && selected[1] === col;
    svg
      .append("path")
      .attr("class", isSelected ? "pc-series highlighted" : "pc-series")
      .attr("data-row", row)
      .attr("data-col", col)
      .attr("data-points", series.length)
      .attr("stroke", color(series[0][1]))
      .attr("d", toPath(series));
  }
}

/** Table of the top attributed trips, verbatim from the report. */
export function renderTrajectoryTable(
  container: HTMLElement,
  report: GridReportPayload,
): void {
  const root = select(container);
  root.selectAll("*").remove();
  if (report.top.length === 0) {
    root.append("p").attr("class", "empty-notice").text("no influential trajectories");
    return;
  }
  const table = root.append("table").attr("class", "trip-table");
  const head = table.append("thead").append("tr");
  for (const label of ["trip", "phi", "stderr", "method"]) {
    head.append("th").text(label);
  }
  const body = table.append("tbody");
  for (const att of report.top) {
    const tr = body.append("tr").attr("class", phiClass(att.phi));
    tr.append("td").attr("class", "trip-id").text(String(att.player));
    tr.append("td").attr("class", "phi").attr("data-phi", att.phi).text(String(att.phi));
    tr.append("td").attr("class", "stderr").text(String(att.stderr));
    tr.append("td").attr("class", "method").text(att.method);
  }
}

/** Bi-directional columns: positive up, negative down, per lookback bucket. */
export function renderTimeChannels(
  container: HTMLElement,
  report: GridReportPayload,
  width = 420,
  height = 160,
): void {
  const root = select(container);
  root.selectAll("*").remove();
  const svg = root
    .append("svg")
    .attr("class", "time-channels")
    .attr("viewBox", `0 0 ${width} ${height}`);
  const channels = report.time_channels;
  const mid = height / 2;
  const maxMag = Math.max(1e-9, ...channels.map((c) => Math.max(c.pos, c.neg)));
  const band = width / channels.length;
  const bar = scaleLinear().domain([0, maxMag]).range([0, mid - 18]);
  svg
    .append("line")
    .attr("class", "channel-baseline")
    .attr("x1", 0)
    .attr("x2", width)
    .attr("y1", mid)
    .attr("y2", mid);
  channels.forEach((channel, i) => {
    const cx = (i + 0.5) * band;
    svg
      .append("rect")
      .attr("class", "channel-pos")
      .attr("data-lookback", channel.lookback)
      .attr("data-value", channel.pos)
      .attr("x", cx - band * 0.3)
      .attr("y", mid - bar(channel.pos))
      .attr("width", band * 0.6)
      .attr("height", bar(channel.pos));
    svg
      .append("rect")
      .attr("class", "channel-neg")
      .attr("data-lookback", channel.lookback)
      .attr("data-value", channel.neg)
      .attr("x", cx - band * 0.3)
      .attr("y", mid)
      .attr("width", band * 0.6)
      .attr("height", bar(channel.neg));
    svg
      .append("text")
      .attr("class", "channel-label")
      .attr("x", cx)
      .attr("y", height - 4)
      .attr("text-anchor", "middle")
      .text(channel.lookback);
  });
}
