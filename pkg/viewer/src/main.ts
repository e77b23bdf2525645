// DOM wiring: binds a ViewerSession to the controls in index.html.

import { ApiClient } from "./api.js";
import { ViewerSession } from "./session.js";
import { overlayPixels } from "./overlay.js";

const $ = (id: string) => document.getElementById(id) as HTMLElement;

const api = new ApiClient("");
const session = new ViewerSession(api);

const viewSelect = $("view-select") as HTMLSelectElement;
const queryInput = $("query-input") as HTMLInputElement;
const submitBtn = $("submit-btn") as HTMLButtonElement;
const banner = $("error-banner");
const baseImg = $("base-img") as HTMLImageElement;
const overlayCanvas = $("overlay-canvas") as HTMLCanvasElement;
const opacityInput = $("opacity-input") as HTMLInputElement;
const manualToggle = $("manual-scale-toggle") as HTMLInputElement;
const scaleInput = $("scale-input") as HTMLInputElement;
const temperatureInput = $("temperature-input") as HTMLInputElement;
const canonicalsInput = $("canonicals-input") as HTMLTextAreaElement;
const applyCanonicals = $("apply-canonicals") as HTMLButtonElement;
const resetCanonicals = $("reset-canonicals") as HTMLButtonElement;
const historyList = $("history-list");
const statusLine = $("status-line");

let shownRenderUrl = "";

function drawOverlay() {
  const ctx = overlayCanvas.getContext("2d")!;
  if (!session.overlay) {
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    return;
  }
  const { scores, width, height } = session.overlay;
  overlayCanvas.width = width;
  overlayCanvas.height = height;
  const pixels = overlayPixels(scores, width, height, session.opacity);
  ctx.putImageData(new ImageData(pixels, width, height), 0, 0);
}

function update() {
  viewSelect.innerHTML = "";
  for (const v of session.views) {
    const opt = document.createElement("option");
    opt.value = v.id;
    opt.textContent = `${v.id} (${v.width}x${v.height})`;
    opt.selected = v.id === session.viewId;
    viewSelect.appendChild(opt);
  }

  submitBtn.disabled = !session.canSubmit() || session.busy;
  banner.textContent = session.error || "";
  banner.style.display = session.error ? "block" : "none";
  scaleInput.disabled = !manualToggle.checked;

  const url = session.renderUrl();
  if (session.viewId && url !== shownRenderUrl) {
    shownRenderUrl = url;
    baseImg.src = url;
  }

  historyList.innerHTML = "";
  for (const entry of session.history) {
    const li = document.createElement("li");
    li.textContent = `"${entry.query}" @ ${entry.view}: ` +
      `max ${entry.max_score.toFixed(4)}, ` +
      `scale ${entry.selected_scale.toFixed(3)} (${entry.scale_source})`;
    historyList.appendChild(li);
  }

  if (session.busy) {
    statusLine.textContent = "querying...";
  } else if (session.lastResponse) {
    const r = session.lastResponse;
    statusLine.textContent = `max score ${r.max_score.toFixed(4)} at scale ` +
      `${r.selected_scale.toFixed(3)} (${r.scale_source})`;
  } else {
    statusLine.textContent = "";
  }

  drawOverlay();
}

function readCanonicals(): string[] {
  return canonicalsInput.value.split("\n");
}

async function start() {
  session.onChange(update);
  await session.init();
  canonicalsInput.value = session.canonicals.join("\n");
  temperatureInput.value = String(session.temperature);
  opacityInput.value = String(session.opacity);

  viewSelect.addEventListener("change", () => {
    void session.switchView(viewSelect.value);
  });
  queryInput.addEventListener("input", () => {
    session.setQueryText(queryInput.value);
  });
  queryInput.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void session.submit();
  });
  submitBtn.addEventListener("click", () => {
    void session.submit();
  });
  opacityInput.addEventListener("input", () => {
    session.setOpacity(Number(opacityInput.value));
  });
  manualToggle.addEventListener("change", () => {
    session.setManualScale(
      manualToggle.checked ? Number(scaleInput.value) : null);
  });
  scaleInput.addEventListener("change", () => {
    if (manualToggle.checked) session.setManualScale(Number(scaleInput.value));
  });
  temperatureInput.addEventListener("change", () => {
    session.setTemperature(Number(temperatureInput.value));
  });
  applyCanonicals.addEventListener("click", () => {
    if (session.editCanonicals(readCanonicals())) {
      canonicalsInput.value = session.canonicals.join("\n");
    }
  });
  resetCanonicals.addEventListener("click", () => {
    session.resetCanonicals();
    canonicalsInput.value = session.canonicals.join("\n");
  });

  // Pick up retrained checkpoints; refresh() drops anything cached under the
  // old one.
  setInterval(() => {
    api.health().then((h) => {
      if (h.checkpoint_step !== session.checkpointStep) void session.refresh();
    }).catch(() => { /* service down; the next poll retries */ });
  }, 10000);

  update();
}

start().catch((err) => {
  console.log("viewer failed to start", err);
  banner.textContent = err instanceof Error ? err.message : String(err);
  banner.style.display = "block";
});
