// HTTP client for the relighting service plus the debounced,
// sequence-numbered request loop that keeps the preview fresh.

import { Sh27, assertSh27 } from "./shmath.js";

export interface RelightOptions {
  shadowMode?: string;
  useResidual?: boolean;
  skyFill?: string;
}

export type Fetcher = (url: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private fetcher: Fetcher = (url, init) => fetch(url, init),
  ) {}

  url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async createSession(image: Blob, mask: Blob, iters?: number): Promise<string> {
    const form = new FormData();
    form.append("image", image, "image.png");
    form.append("mask", mask, "mask.png");
    if (iters !== undefined) form.append("iters", String(iters));
    const r = await this.fetcher(this.url("/sessions"), { method: "POST", body: form });
    if (!r.ok) throw new Error(`session creation failed: ${r.status}`);
    return (await r.json()).id as string;
  }

  async status(sessionId: string): Promise<string> {
    const r = await this.fetcher(this.url(`/sessions/${sessionId}`));
    if (!r.ok) throw new Error(`status failed: ${r.status}`);
    return (await r.json()).status as string;
  }

  async waitReady(sessionId: string, timeoutMs = 120000, pollMs = 250): Promise<void> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const s = await this.status(sessionId);
      if (s === "ready") return;
      if (s === "failed") throw new Error("decomposition failed");
      if (Date.now() > deadline) throw new Error("timed out waiting for decomposition");
      await new Promise((resolve) => setTimeout(resolve, pollMs));
    }
  }

  layerUrl(sessionId: string, layer: string): string {
    return this.url(`/sessions/${sessionId}/decomposition/${layer}`);
  }

  async layerBytes(sessionId: string, layer: string): Promise<ArrayBuffer> {
    const r = await this.fetcher(this.layerUrl(sessionId, layer));
    if (!r.ok) throw new Error(`layer fetch failed: ${r.status}`);
    return r.arrayBuffer();
  }

  async sessionLighting(sessionId: string): Promise<Sh27> {
    const r = await this.fetcher(this.url(`/sessions/${sessionId}/lighting`));
    if (!r.ok) throw new Error(`lighting fetch failed: ${r.status}`);
    return assertSh27((await r.json()).sh);
  }

  async presets(): Promise<{ name: string; sh: Sh27 }[]> {
    const r = await this.fetcher(this.url("/presets"));
    if (!r.ok) throw new Error(`presets fetch failed: ${r.status}`);
    return r.json();
  }

  async relight(sessionId: string, sh: Sh27, options: RelightOptions = {}): Promise<Blob> {
    assertSh27(sh); // the UI must never send a malformed array
    const body = {
      sh,
      shadow_mode: options.shadowMode ?? "none",
      use_residual: options.useResidual ?? false,
      sky_fill: options.skyFill ?? "original",
    };
    const r = await this.fetcher(this.url(`/sessions/${sessionId}/relight`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!r.ok) throw new Error(`relight failed: ${r.status}`);
    return r.blob();
  }

  async relightEnvmap(sessionId: string, envmap: Blob, align: number[],
                      options: RelightOptions = {}): Promise<Blob> {
    const form = new FormData();
    form.append("envmap", envmap, "envmap.hdr");
    form.append("align", JSON.stringify(align));
    form.append("shadow_mode", options.shadowMode ?? "none");
    form.append("use_residual", String(options.useResidual ?? false));
    form.append("sky_fill", options.skyFill ?? "original");
    const r = await this.fetcher(this.url(`/sessions/${sessionId}/relight-envmap`), {
      method: "POST",
      body: form,
    });
    if (!r.ok) throw new Error(`envmap relight failed: ${r.status}`);
    return r.blob();
  }
}

export interface PreviewUpdate {
  sequence: number;
  blob: Blob;
}

// Debounce-and-supersede: lighting edits send at most one request per
// debounce window, every request gets a monotone sequence number, and a
// response is dropped when a newer request has been issued since.
export class RelightLoop {
  private pendingTimer: ReturnType<typeof setTimeout> | null = null;
  private pendingSh: Sh27 | null = null;
  private nextSequence = 0;
  private latestIssued = -1;
  private displayedSequence = -1;

  constructor(
    private client: ServiceClient,
    private sessionId: string,
    private onPreview: (update: PreviewUpdate) => void,
    private options: RelightOptions = {},
    private debounceMs = 120,
    private onError: (err: unknown) => void = () => undefined,
  ) {
    if (debounceMs < 100) {
      throw new Error("debounce window must be at least 100 ms");
    }
  }

  get displayed(): number {
    return this.displayedSequence;
  }

  get issued(): number {
    return this.latestIssued;
  }

  // schedule a preview refresh for the given lighting state
  update(sh: Sh27): void {
    this.pendingSh = assertSh27(sh.slice());
    if (this.pendingTimer !== null) {
      clearTimeout(this.pendingTimer);
    }
    this.pendingTimer = setTimeout(() => {
      this.pendingTimer = null;
      if (this.pendingSh) this.issue(this.pendingSh);
    }, this.debounceMs);
  }

  // send immediately, bypassing the debounce window (reset button)
  flush(sh: Sh27): void {
    if (this.pendingTimer !== null) {
      clearTimeout(this.pendingTimer);
      this.pendingTimer = null;
    }
    this.issue(assertSh27(sh.slice()));
  }

  private issue(sh: Sh27): void {
    const sequence = this.nextSequence++;
    this.latestIssued = sequence;
    this.client
      .relight(this.sessionId, sh, this.options)
      .then((blob) => {
        // a newer request supersedes this response; drop it
        if (sequence !== this.latestIssued) return;
        if (sequence <= this.displayedSequence) return;
        this.displayedSequence = sequence;
        this.onPreview({ sequence, blob });
      })
      .catch(this.onError);
  }
}
