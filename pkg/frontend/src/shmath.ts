// Order-2 SH lighting math mirroring the service's convention:
// basis b(n) = [1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2], a 27-float
// array laid out as the R row, then G, then B. Camera frame: x right,
// y down, z forward, so "up" is -y.

export type Sh27 = number[];

export interface SunParams {
  azimuthDeg: number; // 0 = camera forward (+z), increases clockwise seen from above
  elevationDeg: number; // above the horizon
  intensity: number;
  ambient: number;
  color: [number, number, number];
}

export const SH_LENGTH = 27;
export const LUMA = [0.2126, 0.7152, 0.0722];

// column indices of the linear monomials inside one 9-wide band row
const COL_Y = 1;
const COL_Z = 2;
const COL_X = 3;

export function assertSh27(sh: number[]): Sh27 {
  if (sh.length !== SH_LENGTH) {
    throw new Error(`sh array must have ${SH_LENGTH} entries, got ${sh.length}`);
  }
  return sh;
}

export function zeros27(): Sh27 {
  return new Array(SH_LENGTH).fill(0);
}

// Band grouping for the slider panel: DC (1 per channel), linear (3),
// quadratic (5), preserving the 9-column ordering within each channel row.
export interface BandIndices {
  dc: number[];
  linear: number[];
  quadratic: number[];
}

export function bandIndices(): BandIndices {
  const dc: number[] = [];
  const linear: number[] = [];
  const quadratic: number[] = [];
  for (let c = 0; c < 3; c++) {
    const row = 9 * c;
    dc.push(row);
    linear.push(row + COL_Y, row + COL_Z, row + COL_X);
    quadratic.push(row + 4, row + 5, row + 6, row + 7, row + 8);
  }
  return { dc, linear, quadratic };
}

export function sunDirection(azimuthDeg: number, elevationDeg: number): [number, number, number] {
  const az = (azimuthDeg * Math.PI) / 180;
  const el = (elevationDeg * Math.PI) / 180;
  return [Math.cos(el) * Math.sin(az), -Math.sin(el), Math.cos(el) * Math.cos(az)];
}

// Least-squares projection of a clamped-cosine directional light onto the
// basis: max(0, n.d) ~ 1/4 + (n.d)/2 + 5/32 (3 (n.d)^2 - 1), expanded over
// the monomial columns, plus a flat ambient term on the DC column.
export function sunToSh(sun: SunParams): Sh27 {
  const [dx, dy, dz] = sunDirection(sun.azimuthDeg, sun.elevationDeg);
  const row = new Array(9).fill(0);
  row[0] = 0.25;
  row[COL_Y] = 0.5 * dy;
  row[COL_Z] = 0.5 * dz;
  row[COL_X] = 0.5 * dx;
  row[4] = (15 / 16) * dx * dy;
  row[5] = (15 / 16) * dy * dz;
  row[6] = (5 / 64) * (3 * dz * dz - 1);
  row[7] = (15 / 16) * dx * dz;
  row[8] = (15 / 64) * (dx * dx - dy * dy);
  const sh = zeros27();
  for (let c = 0; c < 3; c++) {
    const gain = sun.intensity * sun.color[c];
    for (let q = 0; q < 9; q++) {
      sh[9 * c + q] = gain * row[q];
    }
    sh[9 * c] += sun.ambient;
  }
  return sh;
}

// Luminance-weighted direction of the linear band; the inverse of sunToSh
// up to the quadratic truncation.
export function shToSun(sh: Sh27): { azimuthDeg: number; elevationDeg: number; intensity: number; ambient: number } {
  assertSh27(sh);
  let vx = 0;
  let vy = 0;
  let vz = 0;
  let dcLum = 0;
  for (let c = 0; c < 3; c++) {
    vx += LUMA[c] * sh[9 * c + COL_X];
    vy += LUMA[c] * sh[9 * c + COL_Y];
    vz += LUMA[c] * sh[9 * c + COL_Z];
    dcLum += LUMA[c] * sh[9 * c];
  }
  const norm = Math.hypot(vx, vy, vz);
  if (norm < 1e-12) {
    throw new Error("no directional component in lighting");
  }
  const dx = vx / norm;
  const dy = vy / norm;
  const dz = vz / norm;
  const elevationDeg = (Math.asin(Math.max(-1, Math.min(1, -dy))) * 180) / Math.PI;
  const azimuthDeg = (Math.atan2(dx, dz) * 180) / Math.PI;
  const intensity = 2 * norm; // linear-band gain is intensity / 2
  const ambient = dcLum - intensity / 4;
  return { azimuthDeg, elevationDeg, intensity, ambient };
}

export function scaleSh(sh: Sh27, factor: number): Sh27 {
  return assertSh27(sh).map((v) => v * factor);
}

export function dcLuminance(sh: Sh27): number {
  assertSh27(sh);
  return LUMA[0] * sh[0] + LUMA[1] * sh[9] + LUMA[2] * sh[18];
}

export function normalizeAzimuthDeg(a: number): number {
  let out = a % 360;
  if (out > 180) out -= 360;
  if (out <= -180) out += 360;
  return out;
}
