// Lighting-editor state: the 27 coefficients, the sun widget, and the
// slider/sun consistency rules, kept free of DOM concerns.

import {
  Sh27,
  SunParams,
  assertSh27,
  normalizeAzimuthDeg,
  shToSun,
  sunToSh,
  zeros27,
} from "./shmath.js";

export type EditorMode = "sliders" | "sun" | "envmap";

export interface LightingState {
  sh: Sh27;
  sun: SunParams;
  mode: EditorMode;
}

export interface HistoryEntry {
  label: string;
  state: LightingState;
}

const DEFAULT_SUN: SunParams = {
  azimuthDeg: 0,
  elevationDeg: 45,
  intensity: 1,
  ambient: 0.3,
  color: [1, 1, 1],
};

function cloneState(state: LightingState): LightingState {
  return {
    sh: state.sh.slice(),
    sun: { ...state.sun, color: [...state.sun.color] as [number, number, number] },
    mode: state.mode,
  };
}

export class EditorModel {
  state: LightingState;
  history: HistoryEntry[] = [];
  private originalSh: Sh27;

  constructor(originalSh: Sh27) {
    this.originalSh = assertSh27(originalSh.slice());
    this.state = {
      sh: originalSh.slice(),
      sun: { ...DEFAULT_SUN, color: [1, 1, 1] },
      mode: "sliders",
    };
  }

  // every mutation funnels through here so the invariant stays checked
  private setSh(sh: Sh27): void {
    this.state.sh = assertSh27(sh);
  }

  setSlider(index: number, value: number): void {
    if (index < 0 || index >= 27) throw new Error(`slider index ${index} out of range`);
    const sh = this.state.sh.slice();
    sh[index] = value;
    this.setSh(sh);
    this.state.mode = "sliders";
  }

  setSun(partial: Partial<SunParams>): void {
    this.state.sun = {
      ...this.state.sun,
      ...partial,
      azimuthDeg: normalizeAzimuthDeg(partial.azimuthDeg ?? this.state.sun.azimuthDeg),
    };
    this.setSh(sunToSh(this.state.sun));
    this.state.mode = "sun";
  }

  // entering sun mode derives the widget angles from the current sliders,
  // so slider -> sun -> slider round trips keep azimuth/elevation
  enterSunMode(): void {
    try {
      const derived = shToSun(this.state.sh);
      this.state.sun = {
        ...this.state.sun,
        azimuthDeg: normalizeAzimuthDeg(derived.azimuthDeg),
        elevationDeg: derived.elevationDeg,
        intensity: Math.max(derived.intensity, 1e-6),
        ambient: derived.ambient,
      };
    } catch {
      // pure ambient lighting: keep the previous widget angles
    }
    this.setSh(sunToSh(this.state.sun));
    this.state.mode = "sun";
  }

  enterSliderMode(): void {
    this.state.mode = "sliders";
  }

  enterEnvmapMode(): void {
    this.state.mode = "envmap";
  }

  resetToOriginal(): void {
    this.setSh(this.originalSh.slice());
    this.state.mode = "sliders";
  }

  get original(): Sh27 {
    return this.originalSh.slice();
  }

  snapshot(label: string): void {
    this.history.push({ label, state: cloneState(this.state) });
  }

  restore(index: number): void {
    const entry = this.history[index];
    if (!entry) throw new Error(`no history entry ${index}`);
    this.state = cloneState(entry.state);
  }
}

export function emptyState(): LightingState {
  return { sh: zeros27(), sun: { ...DEFAULT_SUN, color: [1, 1, 1] }, mode: "sliders" };
}
