/** DOM wiring for the fusion studio. */

import { ApiClient, ServiceError } from "./api.js";
import { LabelBuffer, createLabelBuffer, labelColor, paintDisc, uniqueLabels } from "./labels.js";
import { decodeLabelPng, encodeLabelPng } from "./png.js";
import { PreviewScheduler } from "./scheduler.js";
import {
  SessionState,
  defaultWeights,
  initialState,
  missingAssignments,
  normalizeWeights,
} from "./state.js";

type PreviewVars =
  | { kind: "linear"; image: string; weights: Record<string, number> }
  | { kind: "region"; image: string; labels: string; assignment: Record<string, string> };

const api = new ApiClient("");
const state: SessionState = initialState();

// When the labels came straight from /segment and the brush has not touched
// them, the original base64 string is echoed back verbatim.
let pristineLabelsPng: string | null = null;
let brushLabel = 0;

const el = {
  status: document.getElementById("status") as HTMLSpanElement,
  fileInput: document.getElementById("file-input") as HTMLInputElement,
  modeLinear: document.getElementById("mode-linear") as HTMLButtonElement,
  modeRegion: document.getElementById("mode-region") as HTMLButtonElement,
  linearPanel: document.getElementById("linear-panel") as HTMLElement,
  regionPanel: document.getElementById("region-panel") as HTMLElement,
  sliders: document.getElementById("sliders") as HTMLDivElement,
  kInput: document.getElementById("k-input") as HTMLInputElement,
  segmentBtn: document.getElementById("segment-btn") as HTMLButtonElement,
  brushLabels: document.getElementById("brush-labels") as HTMLDivElement,
  brushSize: document.getElementById("brush-size") as HTMLInputElement,
  overlayToggle: document.getElementById("overlay-toggle") as HTMLInputElement,
  assignments: document.getElementById("assignments") as HTMLDivElement,
  regionHint: document.getElementById("region-hint") as HTMLParagraphElement,
  error: document.getElementById("error") as HTMLDivElement,
  refreshStyles: document.getElementById("refresh-styles") as HTMLButtonElement,
  imageCanvas: document.getElementById("image-canvas") as HTMLCanvasElement,
  overlayCanvas: document.getElementById("overlay-canvas") as HTMLCanvasElement,
  preview: document.getElementById("preview") as HTMLImageElement,
};

const scheduler = new PreviewScheduler<PreviewVars, string>(
  async (vars) => {
    if (vars.kind === "linear") return api.fuse(vars.image, vars.weights);
    return api.fuseRegions(vars.image, vars.labels, vars.assignment);
  },
  {
    onResult: (image) => {
      state.preview = image;
      el.preview.src = `data:image/png;base64,${image}`;
      showError(null);
    },
    onError: (err) => showServiceError(err),
  },
  150,
);

function showError(message: string | null): void {
  el.error.hidden = message === null;
  el.error.textContent = message ?? "";
  el.refreshStyles.hidden = true;
}

function showServiceError(err: unknown): void {
  if (err instanceof ServiceError && err.status === 404) {
    // A style disappeared (e.g. the model was swapped); offer a reload.
    el.error.hidden = false;
    el.error.textContent = `${err.message} - the style inventory may be stale.`;
    el.refreshStyles.hidden = false;
    return;
  }
  showError(err instanceof Error ? err.message : String(err));
}

// -- style inventory --------------------------------------------------------

async function loadStyles(): Promise<void> {
  try {
    const styles = await api.styles();
    state.styles = styles.map((s) => s.name);
    state.weights = defaultWeights(state.styles);
    el.status.textContent = `${state.styles.length} styles`;
    renderSliders();
    renderAssignments();
    showError(null);
  } catch (err) {
    el.status.textContent = "offline";
    showServiceError(err);
  }
}

function renderSliders(): void {
  el.sliders.replaceChildren();
  const normalized = normalizeWeights(state.weights);
  for (const name of state.styles) {
    const row = document.createElement("div");
    row.className = "slider-row";
    const label = document.createElement("span");
    label.textContent = name;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(Math.round((state.weights[name] ?? 0) * 100));
    const pct = document.createElement("span");
    pct.className = "pct";
    pct.textContent = normalized ? `${(normalized[name] * 100).toFixed(0)}%` : "-";
    slider.addEventListener("input", () => {
      state.weights[name] = Number(slider.value) / 100;
      updatePercentages();
      requestLinearPreview();
    });
    row.append(label, slider, pct);
    el.sliders.append(row);
  }
}

function updatePercentages(): void {
  const normalized = normalizeWeights(state.weights);
  const rows = el.sliders.querySelectorAll(".slider-row");
  state.styles.forEach((name, i) => {
    const pct = rows[i]?.querySelector(".pct");
    if (pct) pct.textContent = normalized ? `${(normalized[name] * 100).toFixed(0)}%` : "-";
  });
}

// -- linear mode -------------------------------------------------------------

function requestLinearPreview(): void {
  if (state.mode !== "linear" || !state.image) return;
  const normalized = normalizeWeights(state.weights);
  if (!normalized) {
    showError("all weights are zero; raise at least one slider");
    return;
  }
  showError(null);
  scheduler.request({ kind: "linear", image: state.image, weights: normalized });
}

// -- region mode --------------------------------------------------------------

async function segmentAndRender(): Promise<void> {
  if (!state.image) {
    showError("upload an image first");
    return;
  }
  const k = Number(el.kInput.value);
  try {
    const result = await api.segment(state.image, k);
    pristineLabelsPng = result.labels;
    const buf = await decodeLabelPng(result.labels);
    state.labels = buf.data;
    renderOverlay();
    renderBrushButtons();
    renderAssignments();
    showError(null);
    maybeRequestRegionPreview();
  } catch (err) {
    showServiceError(err);
  }
}

function currentLabelBuffer(): LabelBuffer | null {
  if (!state.labels) return null;
  return { data: state.labels, width: state.imageWidth, height: state.imageHeight };
}

function presentLabels(): number[] {
  const buf = currentLabelBuffer();
  return buf ? uniqueLabels(buf) : [];
}

function renderOverlay(): void {
  const buf = currentLabelBuffer();
  const ctx = el.overlayCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, el.overlayCanvas.width, el.overlayCanvas.height);
  if (!buf || !state.overlayVisible || state.mode !== "region") return;
  const img = ctx.createImageData(buf.width, buf.height);
  for (let i = 0; i < buf.data.length; i++) {
    const [r, g, b] = labelColor(buf.data[i]);
    img.data[i * 4] = r;
    img.data[i * 4 + 1] = g;
    img.data[i * 4 + 2] = b;
    img.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

function renderBrushButtons(): void {
  el.brushLabels.replaceChildren();
  const k = Number(el.kInput.value);
  for (let label = 0; label < k; label++) {
    const btn = document.createElement("button");
    const [r, g, b] = labelColor(label);
    btn.style.background = `rgb(${r},${g},${b})`;
    btn.title = `paint region ${label}`;
    if (label === brushLabel) btn.classList.add("active");
    btn.addEventListener("click", () => {
      brushLabel = label;
      renderBrushButtons();
    });
    el.brushLabels.append(btn);
  }
}

function renderAssignments(): void {
  el.assignments.replaceChildren();
  const labels = presentLabels();
  for (const label of labels) {
    const row = document.createElement("div");
    row.className = "assignment-row";
    const chip = document.createElement("div");
    chip.className = "chip";
    const [r, g, b] = labelColor(label);
    chip.style.background = `rgb(${r},${g},${b})`;
    const select = document.createElement("select");
    const blank = document.createElement("option");
    blank.value = "";
    blank.textContent = `region ${label}: pick a style`;
    select.append(blank);
    for (const name of state.styles) {
      const opt = document.createElement("option");
      opt.value = name;
      opt.textContent = name;
      if (state.assignment.get(label) === name) opt.selected = true;
      select.append(opt);
    }
    select.addEventListener("change", () => {
      if (select.value) state.assignment.set(label, select.value);
      else state.assignment.delete(label);
      maybeRequestRegionPreview();
    });
    row.append(chip, select);
    el.assignments.append(row);
  }
}

async function maybeRequestRegionPreview(): Promise<void> {
  if (state.mode !== "region" || !state.image || !state.labels) return;
  const missing = missingAssignments(presentLabels(), state.assignment);
  if (missing.length > 0) {
    el.regionHint.hidden = false;
    el.regionHint.textContent = `assign a style to region${missing.length > 1 ? "s" : ""} ${missing.join(", ")} to preview`;
    return;
  }
  el.regionHint.hidden = true;
  const labelsPng =
    pristineLabelsPng ?? (await encodeLabelPng(currentLabelBuffer()!));
  const assignment: Record<string, string> = {};
  for (const label of presentLabels()) {
    assignment[String(label)] = state.assignment.get(label)!;
  }
  scheduler.request({ kind: "region", image: state.image, labels: labelsPng, assignment });
}

// -- brush ---------------------------------------------------------------------

function canvasCoords(event: PointerEvent): [number, number] {
  const rect = el.overlayCanvas.getBoundingClientRect();
  const x = ((event.clientX - rect.left) / rect.width) * el.overlayCanvas.width;
  const y = ((event.clientY - rect.top) / rect.height) * el.overlayCanvas.height;
  return [x, y];
}

let painting = false;

function paintAt(event: PointerEvent): void {
  const buf = currentLabelBuffer();
  if (!buf) return;
  const [x, y] = canvasCoords(event);
  paintDisc(buf, x, y, Number(el.brushSize.value), brushLabel);
  pristineLabelsPng = null; // brush edits supersede the segmentation PNG
  renderOverlay();
}

el.overlayCanvas.addEventListener("pointerdown", (ev) => {
  if (state.mode !== "region") return;
  if (!state.labels && state.image) {
    // Painting without a segmentation starts from a single background region.
    state.labels = createLabelBuffer(state.imageWidth, state.imageHeight).data;
    pristineLabelsPng = null;
    renderBrushButtons();
  }
  painting = true;
  el.overlayCanvas.setPointerCapture(ev.pointerId);
  paintAt(ev);
});
el.overlayCanvas.addEventListener("pointermove", (ev) => {
  if (painting) paintAt(ev);
});
el.overlayCanvas.addEventListener("pointerup", () => {
  painting = false;
  renderAssignments();
  maybeRequestRegionPreview();
});

// -- upload ---------------------------------------------------------------------

el.fileInput.addEventListener("change", () => {
  const file = el.fileInput.files?.[0];
  if (!file) return;
  const reader = new FileReader();
  reader.onload = async () => {
    const dataUrl = reader.result as string;
    state.image = dataUrl.split(",", 2)[1];
    const img = new Image();
    img.onload = () => {
      state.imageWidth = img.naturalWidth;
      state.imageHeight = img.naturalHeight;
      el.imageCanvas.width = img.naturalWidth;
      el.imageCanvas.height = img.naturalHeight;
      el.overlayCanvas.width = img.naturalWidth;
      el.overlayCanvas.height = img.naturalHeight;
      el.imageCanvas.getContext("2d")!.drawImage(img, 0, 0);
      state.labels = null;
      pristineLabelsPng = null;
      state.assignment.clear();
      renderOverlay();
      renderAssignments();
      requestLinearPreview();
    };
    img.src = dataUrl;
  };
  reader.readAsDataURL(file);
});

// -- mode toggle ------------------------------------------------------------------

function setMode(mode: "linear" | "region"): void {
  state.mode = mode;
  el.modeLinear.classList.toggle("active", mode === "linear");
  el.modeRegion.classList.toggle("active", mode === "region");
  el.linearPanel.hidden = mode !== "linear";
  el.regionPanel.hidden = mode !== "region";
  renderOverlay();
  if (mode === "linear") requestLinearPreview();
  else maybeRequestRegionPreview();
}

el.modeLinear.addEventListener("click", () => setMode("linear"));
el.modeRegion.addEventListener("click", () => setMode("region"));
el.segmentBtn.addEventListener("click", () => void segmentAndRender());
el.overlayToggle.addEventListener("change", () => {
  state.overlayVisible = el.overlayToggle.checked;
  renderOverlay();
});
el.refreshStyles.addEventListener("click", () => void loadStyles());
el.brushSize.addEventListener("input", () => {
  /* value read at paint time */
});

void loadStyles();
