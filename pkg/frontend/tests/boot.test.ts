/** Full-app boot against fixture-backed fetch: the page renders entirely
 * from API payloads and click-through drives selection and attribution. */

import { beforeEach, describe, expect, it, vi } from "vitest";

import clustersFixture from "./fixtures/clusters.json";
import flowsFixture from "./fixtures/flows.json";
import forecastFixture from "./fixtures/forecast.json";
import glyphsFixture from "./fixtures/glyphs.json";
import gridFixture from "./fixtures/attributions_grid.json";
import clusterAttFixture from "./fixtures/attributions_cluster.json";
import metaFixture from "./fixtures/meta.json";
import trajectoriesFixture from "./fixtures/trajectories.json";

const ROUTES: [RegExp, unknown][] = [
  [/^\/api\/meta$/, metaFixture],
  [/^\/api\/clusters$/, clustersFixture],
  [/^\/api\/flows\?/, flowsFixture],
  [/^\/api\/trajectories\?/, trajectoriesFixture],
  [/^\/api\/forecast\?/, forecastFixture],
  [/^\/api\/glyphs\?/, glyphsFixture],
  [/^\/api\/attributions\/grid\//, gridFixture],
  [/^\/api\/attributions\/cluster\//, clusterAttFixture],
];

function fixtureFetch(url: string): Promise<Response> {
  for (const [pattern, body] of ROUTES) {
    if (pattern.test(url)) {
      return Promise.resolve(
        new Response(JSON.stringify(body), {
          status: 200,
          headers: { "content-type": "application/json" },
        }),
      );
    }
  }
  return Promise.resolve(new Response("{}", { status: 404 }));
}

beforeEach(() => {
  document.body.innerHTML = `
    <div id="banner"></div>
    <span id="scenario-label"></span>
    <button id="play">play</button>
    <input id="seek" type="range" />
    <span id="interval-label"></span>
    <button id="heatmap-toggle"></button>
    <span id="heatmap-label"></span>
    <div id="magnified"></div>
    <div id="map"></div>
    <div id="glyph-overlay"></div>
    <section id="grid-panel">
      <div id="square-chart"></div>
      <div id="parallel-coordinates"></div>
      <div id="trip-table"></div>
      <div id="time-channels"></div>
    </section>`;
  vi.stubGlobal("fetch", vi.fn((url: string) => fixtureFetch(String(url))));
});

describe("application boot", () => {
  it("renders every panel from API payloads and handles click-through", async () => {
    await import("../src/main");
    await vi.waitFor(() => {
      expect(document.querySelectorAll("#map .heat-cell").length).toBe(100);
    });

    expect(document.getElementById("scenario-label")?.textContent).toContain("10x10");
    expect(document.querySelectorAll("#map .trajectory").length).toBe(
      (trajectoriesFixture as { trajectories: unknown[] }).trajectories.length,
    );
    expect(document.querySelectorAll("#glyph-overlay .glyph").length).toBe(5);
    expect(document.getElementById("interval-label")?.textContent).toContain(
      String((metaFixture as { default_base: number }).default_base),
    );

    // clicking a glyph selects its cluster and opens the grid panel
    const glyph = document.querySelector("#glyph-overlay .glyph") as SVGGElement;
    glyph.dispatchEvent(new MouseEvent("click", { bubbles: true }));
    await vi.waitFor(() => {
      expect(document.getElementById("grid-panel")?.classList.contains("visible")).toBe(true);
    });
    expect(document.querySelectorAll("#magnified .forecast-point").length).toBe(5);
    expect(document.querySelectorAll("#square-chart .square-cell").length).toBe(100);
    expect(
      document.querySelectorAll("#parallel-coordinates .pc-series").length,
    ).toBeGreaterThan(0);

    // clicking an in-cluster square fetches the report and fills the table
    const active = document.querySelector(
      "#square-chart .square-cell:not(.dimmed)",
    ) as SVGRectElement;
    active.dispatchEvent(new MouseEvent("click", { bubbles: true }));
    await vi.waitFor(() => {
      expect(document.querySelectorAll("#trip-table tbody tr").length).toBe(
        (gridFixture as { top: unknown[] }).top.length,
      );
    });
    expect(document.querySelectorAll("#time-channels .channel-pos").length).toBe(5);
    // overlay trips are colored by attribution sign
    const pos = document.querySelectorAll("#map .trip-overlay.pos").length;
    const neg = document.querySelectorAll("#map .trip-overlay.neg").length;
    expect(pos + neg).toBeLessThanOrEqual(5);
  });
});
