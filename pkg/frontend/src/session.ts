// Editing session: source image, mask layer, undo history, settings, and the
// submit state machine mirroring the service's job states.

import { InpaintSettings, JobState, StudioApi } from "./api.js";
import { applyTool, MaskBitmap, Point, Tool } from "./mask.js";
import { decodeGrayPng, fromBase64, pngDimensions, toBase64 } from "./png.js";

export type UiPhase = "idle" | "queued" | "running" | "done" | "failed";

export class CanvasSession {
  readonly width: number;
  readonly height: number;
  mask: MaskBitmap;
  settings: InpaintSettings = { prompt: "", steps: 50, guidance: 7.5, w: 1.0, seed: 0 };
  phase: UiPhase = "idle";
  lastError: string | null = null;
  resultPngB64: string | null = null;

  private undoStack: MaskBitmap[] = [];
  private imagePngB64: string;

  constructor(imagePng: Uint8Array) {
    const dims = pngDimensions(imagePng);
    this.width = dims.width;
    this.height = dims.height;
    this.mask = new MaskBitmap(this.width, this.height);
    this.imagePngB64 = toBase64(imagePng);
  }

  get imageB64(): string {
    return this.imagePngB64;
  }

  get canSubmit(): boolean {
    return (
      this.phase !== "queued" &&
      this.phase !== "running" &&
      this.settings.prompt.trim().length > 0 &&
      this.mask.count() > 0
    );
  }

  /** Why submit is disabled right now, or null if it is allowed. */
  submitBlocker(): string | null {
    if (this.phase === "queued" || this.phase === "running") return "a job is already active";
    if (this.settings.prompt.trim().length === 0) return "enter a prompt for the masked region";
    if (this.mask.count() === 0) return "paint or simulate a mask first";
    return null;
  }

  drawMask(tool: Tool, geometry: { points?: Point[]; from?: Point; to?: Point; brushWidth?: number }): void {
    const before = applyTool(this.mask, tool, geometry);
    this.undoStack.push(before);
  }

  clearMask(): void {
    this.undoStack.push(this.mask.clone());
    this.mask.clear();
  }

  /** Restore the exact bitmap from before the latest stroke. */
  undo(): boolean {
    const before = this.undoStack.pop();
    if (!before) return false;
    this.mask.assign(before);
    return true;
  }

  undoDepth(): number {
    return this.undoStack.length;
  }

  async simulateFromMask(api: StudioApi, kind: "box" | "irr" | "seg" | "mix", seed: number): Promise<void> {
    const segB64 = toBase64(this.mask.toPng());
    const maskB64 = await api.simulateMask(segB64, kind, seed);
    const decoded = await decodeGrayPng(fromBase64(maskB64));
    const before = this.mask.clone();
    this.mask.assign(MaskBitmap.fromGray(decoded.width, decoded.height, decoded.pixels));
    this.undoStack.push(before);
  }

  async submitAndPoll(api: StudioApi, onTick?: (state: JobState) => void, intervalMs = 500): Promise<JobState> {
    const blocker = this.submitBlocker();
    if (blocker) throw new Error(blocker);
    this.lastError = null;
    this.phase = "queued";
    try {
      const jobId = await api.submitInpaint(this.imagePngB64, toBase64(this.mask.toPng()), this.settings);
      const final = await api.pollJob(
        jobId,
        (state) => {
          this.phase = state.state;
          onTick?.(state);
        },
        intervalMs
      );
      if (final.state === "done" && final.result) {
        this.resultPngB64 = final.result.image;
      } else {
        this.lastError = final.error ?? "job failed";
      }
      return final;
    } catch (err) {
      this.phase = "failed";
      this.lastError = err instanceof Error ? err.message : String(err);
      throw err;
    }
  }

  /** Chain a new session from the generated image for iterative editing. */
  adoptResult(): CanvasSession {
    if (!this.resultPngB64) throw new Error("no result to adopt");
    const next = new CanvasSession(fromBase64(this.resultPngB64));
    next.settings = { ...this.settings };
    return next;
  }
}
