import { describe, expect, it } from "vitest";

import { ApiClient, FetchFn, QueryRequest, ViewInfo } from "../src/api.js";
import {
  DEFAULT_CANONICALS,
  DEFAULT_TEMPERATURE,
  ViewerSession,
} from "../src/session.js";
import { overlayPixels } from "../src/overlay.js";

const W = 4;
const H = 3;

function viewInfo(id: string, index: number): ViewInfo {
  return {
    id,
    index,
    width: W,
    height: H,
    fx: 110, fy: 110, cx: W / 2, cy: H / 2,
    camera_to_world: [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1],
  };
}

function jsonResponse(status: number, doc: unknown): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function rasterResponse(scores: number[]): Response {
  const buf = new ArrayBuffer(scores.length * 4);
  const dv = new DataView(buf);
  scores.forEach((s, i) => dv.setFloat32(i * 4, s, true));
  return new Response(buf, {
    status: 200,
    headers: { "Content-Type": "application/octet-stream" },
  });
}

function abortable(done: Promise<void>, signal?: AbortSignal | null) {
  if (!signal) return done;
  return new Promise<void>((resolve, reject) => {
    const onAbort = () =>
      reject(new DOMException("The operation was aborted", "AbortError"));
    if (signal.aborted) {
      onAbort();
      return;
    }
    signal.addEventListener("abort", onAbort);
    done.then(() => {
      signal.removeEventListener("abort", onAbort);
      resolve();
    }, reject);
  });
}

// In-memory stand-in for the service. Records every /query body and serves
// a fixed score raster whose content-addressed name depends on the request.
function mockServer() {
  const scores = [0.1, 0.2, 0.3, 0.4, 0.45, 0.6, 0.8, 0.2, 0.1, 0.9, 0.7, 0.3];
  const state = {
    checkpointStep: 3000,
    views: [viewInfo("eval_000", 0), viewInfo("eval_001", 1)],
    queryBodies: [] as QueryRequest[],
    querySignals: [] as (AbortSignal | null)[],
    rasterUrls: [] as string[],
    failNext: null as { status: number; error: string } | null,
    gate: null as Promise<void> | null,
    scores,
  };

  const fetchFn: FetchFn = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    if (state.failNext && (path === "/query" || path.startsWith("/rasters"))) {
      const fail = state.failNext;
      state.failNext = null;
      return jsonResponse(fail.status, { error: fail.error });
    }
    if (path === "/views") {
      return jsonResponse(200, {
        views: state.views,
        checkpoint_step: state.checkpointStep,
      });
    }
    if (path === "/health") {
      return jsonResponse(200, {
        status: "ok",
        checkpoint_step: state.checkpointStep,
      });
    }
    if (path === "/query") {
      const body = JSON.parse(String(init?.body)) as QueryRequest;
      state.queryBodies.push(body);
      state.querySignals.push(init?.signal ?? null);
      const gate = state.gate;
      state.gate = null;
      if (gate) await abortable(gate, init?.signal);
      if (!state.views.some((v) => v.id === body.view)) {
        return jsonResponse(404, { error: `unknown view id '${body.view}'` });
      }
      const manual = body.scale !== undefined;
      const rid = `q${state.queryBodies.length}-${body.view}-${body.text}`;
      state.rasterUrls.push(`/rasters/${rid}.f32`);
      return jsonResponse(200, {
        max_score: 0.9,
        selected_scale: manual ? body.scale : 0.55,
        scale_source: manual ? "manual" : "auto",
        query: body.text,
        view: body.view,
        width: W,
        height: H,
        raster_url: `/rasters/${rid}.f32`,
        overlay_url: `/rasters/${rid}.png`,
      });
    }
    if (path.startsWith("/rasters/")) {
      return rasterResponse(state.scores);
    }
    return jsonResponse(404, { error: `no such endpoint '${path}'` });
  };

  return { state, fetchFn };
}

async function freshSession() {
  const server = mockServer();
  const session = new ViewerSession(new ApiClient("", server.fetchFn));
  await session.init();
  return { server, session };
}

describe("submit", () => {
  it("sends the documented payload and records the result", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    expect(session.canSubmit()).toBe(true);

    const ok = await session.submit();
    expect(ok).toBe(true);
    expect(server.state.queryBodies).toEqual([{
      view: "eval_000",
      text: "red box",
      canonicals: ["object", "things", "stuff", "texture"],
      temperature: 10,
    }]);
    expect("scale" in server.state.queryBodies[0]).toBe(false);

    expect(session.history).toEqual([{
      query: "red box",
      max_score: 0.9,
      selected_scale: 0.55,
      scale_source: "auto",
      view: "eval_000",
    }]);
    expect(session.overlay).not.toBeNull();
    expect(session.overlay!.scores.length).toBe(W * H);
    expect(session.error).toBeNull();
  });

  it("adds a scale override when manual scale is on", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    session.setManualScale(0.4);
    await session.submit();
    expect(server.state.queryBodies[0].scale).toBe(0.4);
    expect(session.history[0].scale_source).toBe("manual");

    session.setManualScale(null);
    await session.submit();
    expect("scale" in server.state.queryBodies[1]).toBe(false);
    expect(session.history[1].scale_source).toBe("auto");
  });

  it("is disabled for empty or blank query text", async () => {
    const { server, session } = await freshSession();
    expect(session.canSubmit()).toBe(false);
    session.setQueryText("   ");
    expect(session.canSubmit()).toBe(false);
    expect(await session.submit()).toBe(false);
    expect(server.state.queryBodies.length).toBe(0);
  });

  it("shows a banner on 4xx and leaves the session unchanged", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    await session.submit();
    const overlayBefore = session.overlay;
    const historyBefore = [...session.history];

    server.state.failNext = { status: 400, error: "empty query text" };
    expect(await session.submit()).toBe(false);
    expect(session.error).toBe("empty query text");
    expect(session.overlay).toBe(overlayBefore);
    expect(session.history).toEqual(historyBefore);
    expect(session.lastResponse!.query).toBe("red box");

    await session.submit();
    expect(session.error).toBeNull();
    expect(session.history.length).toBe(2);
  });

  it("surfaces 5xx errors the same way", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    server.state.failNext = { status: 500, error: "render failed" };
    expect(await session.submit()).toBe(false);
    expect(session.error).toBe("render failed");
    expect(session.history.length).toBe(0);
  });

  it("keeps history append-only across queries", async () => {
    const { session } = await freshSession();
    for (const text of ["red box", "blue box", "rubber mat"]) {
      session.setQueryText(text);
      await session.submit();
    }
    expect(session.history.map((h) => h.query))
      .toEqual(["red box", "blue box", "rubber mat"]);
    expect(session.history[0].max_score).toBe(0.9);
  });

  it("renders identical overlays for a repeated identical query", async () => {
    const { session } = await freshSession();
    session.setQueryText("red box");
    await session.submit();
    const first = overlayPixels(
      session.overlay!.scores, W, H, session.opacity);
    await session.submit();
    const second = overlayPixels(
      session.overlay!.scores, W, H, session.opacity);
    expect(Array.from(second)).toEqual(Array.from(first));
  });

  it("aborts the pending request when resubmitted quickly", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");

    let release!: () => void;
    server.state.gate = new Promise((res) => { release = res; });
    const first = session.submit();
    const second = session.submit();
    release();
    expect(await first).toBe(false);
    expect(await second).toBe(true);

    expect(server.state.queryBodies.length).toBe(2);
    expect(server.state.querySignals[0]!.aborted).toBe(true);
    expect(session.history.length).toBe(1);
    expect(session.error).toBeNull();
    expect(session.busy).toBe(false);
  });
});

describe("switchView", () => {
  it("re-runs the current query on the new view, text preserved", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    await session.submit();
    const firstRaster = session.overlay!.rasterUrl;

    await session.switchView("eval_001");
    expect(session.viewId).toBe("eval_001");
    expect(session.queryText).toBe("red box");
    expect(server.state.queryBodies[1]).toMatchObject({
      view: "eval_001",
      text: "red box",
    });
    expect(session.overlay!.rasterUrl).not.toBe(firstRaster);
    expect(session.renderUrl()).toContain("view=eval_001");
  });

  it("rejects an unknown view with a banner, session unchanged", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    await session.submit();

    await session.switchView("eval_999");
    expect(session.error).toBe("unknown view 'eval_999'");
    expect(session.viewId).toBe("eval_000");
    expect(server.state.queryBodies.length).toBe(1);
    expect(session.history.length).toBe(1);
  });

  it("switches without querying when no text is set", async () => {
    const { server, session } = await freshSession();
    await session.switchView("eval_001");
    expect(session.viewId).toBe("eval_001");
    expect(server.state.queryBodies.length).toBe(0);
  });
});

describe("canonicals", () => {
  it("carries edits into the next request payload", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    expect(session.editCanonicals(["object", "box", "clutter"])).toBe(true);
    await session.submit();
    expect(server.state.queryBodies[0].canonicals)
      .toEqual(["object", "box", "clutter"]);
  });

  it("blocks an empty list client-side", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    expect(session.editCanonicals([])).toBe(false);
    expect(session.editCanonicals(["", "  "])).toBe(false);
    expect(session.error).toBe("canonical phrases cannot be empty");
    expect(session.canonicals).toEqual(DEFAULT_CANONICALS);

    await session.submit();
    expect(server.state.queryBodies[0].canonicals)
      .toEqual(DEFAULT_CANONICALS);
  });

  it("reset restores exactly the four defaults", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    session.editCanonicals(["box"]);
    session.resetCanonicals();
    expect(session.canonicals)
      .toEqual(["object", "things", "stuff", "texture"]);
    await session.submit();
    expect(server.state.queryBodies[0].canonicals)
      .toEqual(["object", "things", "stuff", "texture"]);
  });
});

describe("session state", () => {
  it("init picks the first view and the checkpoint step", async () => {
    const { session } = await freshSession();
    expect(session.viewId).toBe("eval_000");
    expect(session.checkpointStep).toBe(3000);
    expect(session.canonicals).toEqual(DEFAULT_CANONICALS);
    expect(session.temperature).toBe(DEFAULT_TEMPERATURE);
    expect(session.renderUrl()).toBe("/render?view=eval_000&v=3000");
  });

  it("clamps opacity to [0, 1]", async () => {
    const { session } = await freshSession();
    session.setOpacity(1.7);
    expect(session.opacity).toBe(1);
    session.setOpacity(-0.2);
    expect(session.opacity).toBe(0);
    session.setOpacity(0.35);
    expect(session.opacity).toBe(0.35);
  });

  it("ignores non-positive temperature and scale", async () => {
    const { session } = await freshSession();
    session.setTemperature(0);
    session.setTemperature(-3);
    session.setTemperature(NaN);
    expect(session.temperature).toBe(DEFAULT_TEMPERATURE);
    session.setManualScale(-1);
    expect(session.manualScale).toBeNull();
  });

  it("drops cached results when the checkpoint changes", async () => {
    const { server, session } = await freshSession();
    session.setQueryText("red box");
    await session.submit();
    expect(session.overlay).not.toBeNull();

    await session.refresh();
    expect(session.overlay).not.toBeNull(); // same checkpoint: keep it
    expect(server.state.queryBodies.length).toBe(1);

    server.state.checkpointStep = 3500;
    await session.refresh();
    expect(session.checkpointStep).toBe(3500);
    expect(session.renderUrl()).toContain("v=3500");
    expect(server.state.queryBodies.length).toBe(2); // re-ran the query
    expect(session.history.length).toBe(2);
  });
});
