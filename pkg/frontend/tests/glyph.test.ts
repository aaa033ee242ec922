/** Radar glyph contract tests against recorded API fixtures. */

import { describe, expect, it } from "vitest";
import { select } from "d3-selection";

import { renderGlyph, renderGlyphLayer, renderMagnifiedGlyph } from "../src/glyphView";
import type { ClustersDoc, Glyph, GlyphsPayload, Meta } from "../src/types";
import clustersFixture from "./fixtures/clusters.json";
import glyphsFixture from "./fixtures/glyphs.json";
import metaFixture from "./fixtures/meta.json";

const meta = metaFixture as unknown as Meta;
const clusters = clustersFixture as unknown as ClustersDoc;
const glyphs = glyphsFixture as unknown as GlyphsPayload;

function drawOne(glyph: Glyph): SVGGElement {
  const host = document.createElement("div");
  const svg = select(host).append("svg");
  const group = svg.append("g");
  renderGlyph(group as never, glyph, 30, Math.max(...glyph.forecast_points, 1));
  return group.node() as SVGGElement;
}

describe("radar glyph", () => {
  it("renders 5 forecast points with the +20-min point highlighted", () => {
    for (const glyph of glyphs.glyphs) {
      const node = drawOne(glyph);
      const points = node.querySelectorAll(".forecast-point");
      expect(points.length).toBe(5);
      const highlighted = node.querySelectorAll(".forecast-point.highlighted");
      expect(highlighted.length).toBe(1);
      // interpreted horizon 2 means the second dot (+20 minutes)
      expect(glyphs.interpreted_horizon).toBe(2);
      expect(highlighted[0].getAttribute("data-horizon")).toBe(String(glyph.highlighted));
      expect(glyph.highlighted).toBe(2);
    }
  });

  it("renders every forecast value verbatim from the payload", () => {
    const glyph = glyphs.glyphs[0];
    const node = drawOne(glyph);
    const values = Array.from(node.querySelectorAll(".forecast-point")).map((c) =>
      Number(c.getAttribute("data-value")),
    );
    expect(values).toEqual(glyph.forecast_points);
  });

  it("draws two diverging sector polygons, not a netted one", () => {
    const node = drawOne(glyphs.glyphs[0]);
    expect(node.querySelectorAll(".sector-pos").length).toBe(1);
    expect(node.querySelectorAll(".sector-neg").length).toBe(1);
  });

  it("collapses all-zero sectors to the center", () => {
    const zero: Glyph = {
      cluster: 0,
      forecast_points: [1, 1, 1, 1, 1],
      highlighted: 2,
      degenerate: false,
      sectors: ["N", "NE", "E", "SE", "S", "SW", "W", "NW"].map((dir) => ({
        dir,
        pos: 0,
        neg: 0,
      })),
    };
    const node = drawOne(zero);
    const points = node.querySelector(".sector-pos")?.getAttribute("points") ?? "";
    for (const pair of points.split(" ")) {
      const [x, y] = pair.split(",").map(Number);
      expect(Math.abs(x)).toBeLessThan(1e-9);
      expect(Math.abs(y)).toBeLessThan(1e-9);
    }
  });

  it("puts a single positive sector due north as one red lobe", () => {
    const single: Glyph = {
      cluster: 0,
      forecast_points: [1, 1, 1, 1, 1],
      highlighted: 2,
      degenerate: false,
      sectors: ["N", "NE", "E", "SE", "S", "SW", "W", "NW"].map((dir) => ({
        dir,
        pos: dir === "N" ? 3 : 0,
        neg: 0,
      })),
    };
    const node = drawOne(single);
    const pairs = (node.querySelector(".sector-pos")?.getAttribute("points") ?? "")
      .split(" ")
      .map((pair) => pair.split(",").map(Number));
    // north vertex reaches up (negative y in svg), everything else collapses
    expect(pairs[0][1]).toBeLessThan(-1);
    for (const [x, y] of pairs.slice(1)) {
      expect(Math.hypot(x, y)).toBeLessThan(1e-9);
    }
  });

  it("marks degenerate clusters and keeps their lobes empty", () => {
    const degenerate: Glyph = {
      cluster: 1,
      forecast_points: [0, 0, 0, 0, 0],
      highlighted: 2,
      degenerate: true,
      sectors: ["N", "NE", "E", "SE", "S", "SW", "W", "NW"].map((dir) => ({
        dir,
        pos: 0,
        neg: 0,
      })),
    };
    const node = drawOne(degenerate);
    expect(node.querySelectorAll(".degenerate-marker").length).toBe(1);
  });

  it("places one glyph per cluster at its centroid", () => {
    const host = document.createElement("div");
    renderGlyphLayer(host, meta, clusters, glyphs);
    const nodes = host.querySelectorAll(".glyph");
    expect(nodes.length).toBe(meta.k);
    const ids = Array.from(nodes).map((n) => n.getAttribute("data-cluster"));
    expect(ids).toEqual(glyphs.glyphs.map((g) => String(g.cluster)));
  });

  it("magnified panel renders the same structure", () => {
    const host = document.createElement("div");
    renderMagnifiedGlyph(host, glyphs.glyphs[0]);
    expect(host.querySelectorAll(".forecast-point").length).toBe(5);
    expect(host.querySelectorAll(".sector-pos").length).toBe(1);
  });

  it("fixture glyph matches the stored rendering snapshot", () => {
    const host = document.createElement("div");
    renderMagnifiedGlyph(host, glyphs.glyphs[0]);
    expect(host.innerHTML).toMatchSnapshot();
  });
});
