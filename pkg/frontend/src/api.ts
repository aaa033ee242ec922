/** Typed API client.
 *
 * Each query kind keeps at most one request in flight: issuing a new one
 * aborts its predecessor, so a stale response can never overwrite newer
 * state. 202 responses are polled via their token until the result lands.
 */

import type {
  ClusterAttributionPayload,
  ClustersDoc,
  FlowsPayload,
  ForecastPayload,
  GlyphsPayload,
  GridReportPayload,
  Meta,
  TrajectoriesPayload,
} from "./types";

const POLL_DELAY_MS = 250;

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  private aborters = new Map<string, AbortController>();

  constructor(private base: string = "") {}

  private async request<T>(kind: string, path: string): Promise<T> {
    this.aborters.get(kind)?.abort();
    const aborter = new AbortController();
    this.aborters.set(kind, aborter);
    let res = await fetch(this.base + path, { signal: aborter.signal });
    while (res.status === 202) {
      const body = (await res.json()) as { detail: { poll: string } };
      await new Promise((resolve) => setTimeout(resolve, POLL_DELAY_MS));
      if (aborter.signal.aborted) {
        throw new DOMException("superseded", "AbortError");
      }
      res = await fetch(this.base + body.detail.poll, { signal: aborter.signal });
    }
    if (!res.ok) {
      let code = "http-error";
      let message = res.statusText;
      try {
        const body = (await res.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(res.status, code, message);
    }
    return (await res.json()) as T;
  }

  meta(): Promise<Meta> {
    return this.request("meta", "/api/meta");
  }

  flows(t: number): Promise<FlowsPayload> {
    return this.request("flows", `/api/flows?t=${t}`);
  }

  trajectories(t: number): Promise<TrajectoriesPayload> {
    return this.request("trajectories", `/api/trajectories?t=${t}`);
  }

  forecast(base: number): Promise<ForecastPayload> {
    return this.request("forecast", `/api/forecast?base=${base}`);
  }

  clusters(): Promise<ClustersDoc> {
    return this.request("clusters", "/api/clusters");
  }

  glyphs(base: number): Promise<GlyphsPayload> {
    return this.request("glyphs", `/api/glyphs?base=${base}`);
  }

  clusterAttributions(
    cluster: number,
    base: number,
    horizon: number,
  ): Promise<ClusterAttributionPayload> {
    return this.request(
      "att-cluster",
      `/api/attributions/cluster/${cluster}?base=${base}&h=${horizon}`,
    );
  }

  gridReport(
    row: number,
    col: number,
    base: number,
    horizon: number,
  ): Promise<GridReportPayload> {
    return this.request(
      "att-grid",
      `/api/attributions/grid/${row}/${col}?base=${base}&h=${horizon}`,
    );
  }
}
