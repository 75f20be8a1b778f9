// DOM wiring for the lighting editor: upload, layer toggles, band-grouped
// sliders, sun widget, history strip and the live relit preview.

import { RelightLoop, ServiceClient } from "./client.js";
import { EditorModel } from "./editor.js";
import { bandIndices } from "./shmath.js";

const LAYERS = ["source", "albedo", "normals", "shadow", "residual"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export async function startApp(baseUrl: string): Promise<void> {
  const client = new ServiceClient(baseUrl);
  let model: EditorModel | null = null;
  let loop: RelightLoop | null = null;
  let sessionId: string | null = null;

  const preview = el<HTMLImageElement>("preview");
  const layerView = el<HTMLImageElement>("layer-view");
  const statusLine = el<HTMLElement>("status");
  const sliderPanel = el<HTMLElement>("sliders");
  const historyStrip = el<HTMLElement>("history");

  function setStatus(text: string): void {
    statusLine.textContent = text;
  }

  function pushPreview(blob: Blob): void {
    const url = URL.createObjectURL(blob);
    const old = preview.src;
    preview.src = url;
    if (old.startsWith("blob:")) URL.revokeObjectURL(old);
  }

  function scheduleRelight(): void {
    if (model && loop) loop.update(model.state.sh);
  }

  function rebuildSliders(): void {
    if (!model) return;
    sliderPanel.innerHTML = "";
    const bands = bandIndices();
    const groups: [string, number[]][] = [
      ["ambient (DC)", bands.dc],
      ["directional (linear)", bands.linear],
      ["detail (quadratic)", bands.quadratic],
    ];
    for (const [label, indices] of groups) {
      const fieldset = document.createElement("fieldset");
      const legend = document.createElement("legend");
      legend.textContent = label;
      fieldset.appendChild(legend);
      for (const idx of indices) {
        const input = document.createElement("input");
        input.type = "range";
        input.min = "-2";
        input.max = "2";
        input.step = "0.01";
        input.value = String(model.state.sh[idx]);
        input.dataset.index = String(idx);
        input.addEventListener("input", () => {
          if (!model) return;
          model.setSlider(idx, Number(input.value));
          scheduleRelight();
        });
        fieldset.appendChild(input);
      }
      sliderPanel.appendChild(fieldset);
    }
  }

  function refreshSliderValues(): void {
    if (!model) return;
    sliderPanel.querySelectorAll("input[type=range]").forEach((node) => {
      const input = node as HTMLInputElement;
      const idx = Number(input.dataset.index);
      input.value = String(model!.state.sh[idx]);
    });
  }

  function addHistoryEntry(): void {
    if (!model) return;
    model.snapshot(`state ${model.history.length + 1}`);
    const index = model.history.length - 1;
    const button = document.createElement("button");
    button.textContent = model.history[index].label;
    button.addEventListener("click", () => {
      if (!model) return;
      model.restore(index);
      refreshSliderValues();
      scheduleRelight();
    });
    historyStrip.appendChild(button);
  }

  el<HTMLButtonElement>("create-session").addEventListener("click", async () => {
    const imageInput = el<HTMLInputElement>("image-file");
    const maskInput = el<HTMLInputElement>("mask-file");
    if (!imageInput.files?.length || !maskInput.files?.length) {
      setStatus("choose an image and a sky mask first");
      return;
    }
    setStatus("uploading and decomposing...");
    sessionId = await client.createSession(imageInput.files[0], maskInput.files[0]);
    await client.waitReady(sessionId);
    const originalSh = await client.sessionLighting(sessionId);
    model = new EditorModel(originalSh);
    loop = new RelightLoop(client, sessionId, (update) => pushPreview(update.blob), {
      shadowMode: "keep_original",
      useResidual: true,
      skyFill: "original",
    });
    rebuildSliders();
    layerView.src = client.layerUrl(sessionId, "albedo");
    loop.flush(model.state.sh);
    setStatus(`session ${sessionId} ready`);
  });

  for (const layer of LAYERS) {
    el<HTMLButtonElement>(`layer-${layer}`).addEventListener("click", () => {
      if (sessionId) layerView.src = client.layerUrl(sessionId, layer) + `?t=${Date.now()}`;
    });
  }

  el<HTMLButtonElement>("reset-original").addEventListener("click", () => {
    if (!model || !loop) return;
    model.resetToOriginal();
    refreshSliderValues();
    loop.flush(model.state.sh);
  });

  el<HTMLButtonElement>("snapshot").addEventListener("click", addHistoryEntry);

  el<HTMLButtonElement>("sun-mode").addEventListener("click", () => {
    if (!model) return;
    model.enterSunMode();
    el<HTMLInputElement>("sun-azimuth").value = String(model.state.sun.azimuthDeg);
    el<HTMLInputElement>("sun-elevation").value = String(model.state.sun.elevationDeg);
    refreshSliderValues();
    scheduleRelight();
  });

  for (const [id, key] of [
    ["sun-azimuth", "azimuthDeg"],
    ["sun-elevation", "elevationDeg"],
    ["sun-intensity", "intensity"],
    ["sun-ambient", "ambient"],
  ] as const) {
    el<HTMLInputElement>(id).addEventListener("input", (event) => {
      if (!model) return;
      const value = Number((event.target as HTMLInputElement).value);
      model.setSun({ [key]: value });
      refreshSliderValues();
      scheduleRelight();
    });
  }

  el<HTMLInputElement>("envmap-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    if (!model || !sessionId || !input.files?.length) return;
    model.enterEnvmapMode();
    setStatus("relighting under uploaded environment map...");
    const blob = await client.relightEnvmap(sessionId, input.files[0],
                                            [1, 0, 0, 0, 1, 0, 0, 0, 1],
                                            { skyFill: "original" });
    pushPreview(blob);
    setStatus("environment-map relight shown");
  });

  const presetBox = el<HTMLElement>("presets");
  for (const preset of await client.presets()) {
    const button = document.createElement("button");
    button.textContent = preset.name;
    button.addEventListener("click", () => {
      if (!model) return;
      for (let i = 0; i < 27; i++) model.setSlider(i, preset.sh[i]);
      refreshSliderValues();
      scheduleRelight();
    });
    presetBox.appendChild(button);
  }
}
