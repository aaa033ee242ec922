/** Bootstrap: dashboard controls + the three views wired to the API. */

import { ApiClient } from "./api";
import { renderGlyphLayer, renderMagnifiedGlyph } from "./glyphView";
import {
  clusterCells,
  renderParallelCoordinates,
  renderSquareChart,
  renderTimeChannels,
  renderTrajectoryTable,
} from "./gridView";
import { overlayFromReport, renderMapView, type OverlayTrip } from "./mapView";
import { StateStore } from "./state";
import type {
  ClustersDoc,
  FlowsPayload,
  ForecastPayload,
  GlyphsPayload,
  GridReportPayload,
  Meta,
  TrajectoriesPayload,
} from "./types";
import "./style.css";

const PLAYBACK_MS = 1200;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

async function boot(): Promise<void> {
  const api = new ApiClient();
  let meta: Meta;
  try {
    meta = await api.meta();
  } catch (err) {
    el("banner").textContent = `service unavailable: ${String(err)}`;
    el("banner").classList.add("visible");
    setTimeout(boot, 1500);
    return;
  }
  const clusters: ClustersDoc = await api.clusters();
  const store = new StateStore(meta);

  let flows: FlowsPayload | null = null;
  let trajectories: TrajectoriesPayload | null = null;
  let forecast: ForecastPayload | null = null;
  let glyphs: GlyphsPayload | null = null;
  let report: GridReportPayload | null = null;
  let overlay: OverlayTrip[] = [];

  const banner = el("banner");
  const showBanner = (text: string) => {
    banner.textContent = text;
    banner.classList.add("visible");
  };
  const clearBanner = () => banner.classList.remove("visible");

  const seek = el("seek") as unknown as HTMLInputElement;
  seek.min = "0";
  seek.max = String(meta.n_intervals - 1);
  el("scenario-label").textContent =
    `${meta.rows}x${meta.cols} grid, k=${meta.k}, ${meta.predictor}, ` +
    `${meta.n_intervals} intervals of ${meta.interval_seconds}s`;

  const renderAll = () => {
    const state = store.state;
    seek.value = String(state.t);
    el("interval-label").textContent = `interval ${state.t}`;
    (el("play") as HTMLButtonElement).textContent = state.playing ? "pause" : "play";
    el("heatmap-label").textContent =
      state.heatmap === "observed"
        ? "observed flow"
        : `predicted flow +${state.horizon * (meta.interval_seconds / 60)} min`;

    let heat: number[][] | null = null;
    if (state.heatmap === "observed") {
      heat = flows ? flows.inflow : null;
    } else if (forecast) {
      heat = forecast.frames[state.horizon - 1]?.inflow ?? null;
    }
    renderMapView(el("map"), {
      meta,
      heat,
      trajectories: trajectories ? trajectories.trajectories : [],
      clusters,
      overlay,
    }, state, (row, col) => selectCell(row, col));

    if (glyphs) {
      renderGlyphLayer(el("glyph-overlay"), meta, clusters, glyphs, (cluster) =>
        selectCluster(cluster),
      );
      if (state.selectedCluster !== null) {
        const glyph = glyphs.glyphs.find((g) => g.cluster === state.selectedCluster);
        if (glyph) {
          renderMagnifiedGlyph(el("magnified"), glyph);
        }
      }
    }

    if (state.selectedCluster !== null && flows && forecast) {
      const cells = clusterCells(clusters.grid_assignment, state.selectedCluster);
      el("grid-panel").classList.add("visible");
      renderSquareChart(el("square-chart"), meta, flows, cells, state.selectedCell,
                        (row, col) => selectCell(row, col));
      renderParallelCoordinates(el("parallel-coordinates"), meta, forecast, cells,
                                state.selectedCell);
    } else {
      el("grid-panel").classList.remove("visible");
    }

    if (report) {
      renderTrajectoryTable(el("trip-table"), report);
      renderTimeChannels(el("time-channels"), report);
    }
  };

  const refresh = async () => {
    const state = store.state;
    try {
      [flows, trajectories, forecast, glyphs] = await Promise.all([
        api.flows(state.t),
        api.trajectories(state.t),
        api.forecast(Math.max(4, state.t)),
        api.glyphs(Math.max(4, state.t)),
      ]);
      clearBanner();
    } catch (err) {
      if ((err as Error).name !== "AbortError") {
        showBanner(`request failed, keeping last frame: ${String(err)}`);
      }
      return;
    }
    renderAll();
  };

  const selectCluster = (cluster: number) => {
    store.update({ selectedCluster: cluster, selectedCell: null });
    report = null;
    overlay = [];
    renderAll();
  };

  const selectCell = async (row: number, col: number) => {
    store.update({ selectedCell: [row, col] });
    try {
      report = await api.gridReport(row, col, Math.max(4, store.state.t), store.state.horizon);
      const trips = new Map(
        (trajectories ? trajectories.trajectories : []).map((t) => [t.trip, t]),
      );
      overlay = overlayFromReport(report, trips);
      clearBanner();
    } catch (err) {
      if ((err as Error).name !== "AbortError") {
        showBanner(`attribution failed: ${String(err)}`);
      }
      return;
    }
    renderAll();
  };

  el("play").addEventListener("click", () => store.togglePlay());
  seek.addEventListener("input", () => {
    store.pause();
    store.seek(Number(seek.value));
  });
  el("heatmap-toggle").addEventListener("click", () => {
    store.update({
      heatmap: store.state.heatmap === "observed" ? "predicted" : "observed",
    });
  });

  let lastT = -1;
  store.subscribe((state) => {
    if (state.t !== lastT) {
      lastT = state.t;
      void refresh();
    } else {
      renderAll();
    }
  });

  setInterval(() => {
    if (store.state.playing) {
      store.stepForward();
    }
  }, PLAYBACK_MS);

  await refresh();
}

void boot();
