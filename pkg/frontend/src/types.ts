/** Payload shapes of the flowshap HTTP API, mirrored field for field. */

export interface Projection {
  lon_center: number;
  lat_center: number;
  meters_per_deg_lon: number;
  meters_per_deg_lat: number;
}

export interface Meta {
  bbox: [number, number, number, number];
  rows: number;
  cols: number;
  k: number;
  interval_seconds: number;
  t0: number;
  n_intervals: number;
  time_range: [number, number];
  horizons: number;
  interpreted_horizon: number;
  predictor: string;
  seed: number;
  flow_max: number;
  default_base: number;
  bases: number[];
  projection: Projection;
}

export interface FlowsPayload {
  t: number;
  start: number;
  end: number;
  inflow: number[][];
  outflow: number[][];
}

export interface TrajectoryItem {
  trip: string;
  vehicle: string;
  points: [number, number, number][]; // ts, lon, lat
}

export interface TrajectoriesPayload {
  t: number;
  start: number;
  end: number;
  trajectories: TrajectoryItem[];
}

export interface ForecastFrame {
  h: number;
  inflow: number[][];
  outflow: number[][];
}

export interface ForecastPayload {
  base: number;
  horizons: number;
  clamped: number;
  frames: ForecastFrame[];
}

export interface ClustersDoc {
  k: number;
  labels: Record<string, number>;
  centroids: [number, number][]; // planar
  regions: Record<string, number[][][]>; // cluster id -> rings -> [x, y]
  grid_assignment: number[][];
  adjacency: Record<string, number[]>;
  grid: { bbox: [number, number, number, number]; rows: number; cols: number };
  sites: Record<string, [number, number]>;
  projection: Projection;
  inertia: number;
}

export interface Sector {
  dir: string;
  pos: number;
  neg: number;
}

export interface Glyph {
  cluster: number;
  forecast_points: number[]; // 5 values, +10..+50 min
  highlighted: number; // 1-based horizon; 2 = +20 min
  degenerate: boolean;
  sectors: Sector[]; // 8 compass sectors
}

export interface GlyphsPayload {
  base: number;
  interpreted_horizon: number;
  glyphs: Glyph[];
}

export interface AttributionItem {
  player: string | number;
  phi: number;
  stderr: number;
  method: string;
}

export interface ClusterAttributionPayload {
  cluster: number;
  base: number;
  horizon: number;
  degenerate: boolean;
  attributions: AttributionItem[];
  sectors: Sector[] | null;
}

export interface TimeChannel {
  lookback: string; // "0-10" .. "40-50" minutes
  pos: number;
  neg: number;
}

export interface GridReportPayload {
  cell: [number, number];
  base: number;
  horizon: number;
  n_candidates: number;
  top: AttributionItem[];
  time_channels: TimeChannel[];
}

export interface ApiError {
  code: string;
  message: string;
  detail: unknown;
}
