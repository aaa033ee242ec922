/** Shared view state: playback, selections, toggles.
 *
 * One store backs all three views, so switching views preserves pause state
 * and selections. Playback indices are clamped to the scenario range; the
 * UI never mutates server data.
 */

import type { Meta } from "./types";

export type HeatmapMode = "observed" | "predicted";
export type ViewName = "map" | "grid";

export interface ViewState {
  t: number; // displayed interval index
  playing: boolean;
  heatmap: HeatmapMode;
  selectedCluster: number | null;
  selectedCell: [number, number] | null;
  horizon: number; // interpreted horizon, 1-based
  view: ViewName;
}

export type Listener = (state: ViewState) => void;

export class StateStore {
  state: ViewState;
  private meta: Meta;
  private listeners: Listener[] = [];

  constructor(meta: Meta) {
    this.meta = meta;
    this.state = {
      t: meta.default_base,
      playing: false,
      heatmap: "observed",
      selectedCluster: null,
      selectedCell: null,
      horizon: meta.interpreted_horizon,
      view: "map",
    };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    if (patch.t !== undefined) {
      this.state.t = this.clampInterval(patch.t);
    }
    if (patch.selectedCluster !== undefined && patch.selectedCluster !== null) {
      if (patch.selectedCluster < 0 || patch.selectedCluster >= this.meta.k) {
        this.state.selectedCluster = null;
      }
    }
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  clampInterval(t: number): number {
    return Math.min(this.meta.n_intervals - 1, Math.max(0, Math.round(t)));
  }

  seek(t: number): void {
    this.update({ t });
  }

  togglePlay(): void {
    this.update({ playing: !this.state.playing });
  }

  pause(): void {
    this.update({ playing: false });
  }

  stepForward(): void {
    const next = this.state.t + 1;
    // wrap at the end so playback loops the scenario
    this.update({ t: next >= this.meta.n_intervals ? 0 : next });
  }
}
