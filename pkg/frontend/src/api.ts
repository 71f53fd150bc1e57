// Thin typed client over the service JSON API. Images travel as base64 PNG.

export interface HealthInfo {
  status: string;
  preset: string;
}

export interface JobResult {
  image: string; // base64 PNG
  timing_s: number;
  settings: Record<string, unknown>;
}

export interface JobState {
  id: string;
  state: "queued" | "running" | "done" | "failed";
  error: string | null;
  result: JobResult | null;
}

export interface InpaintSettings {
  prompt: string;
  steps: number;
  guidance: number;
  w: number;
  seed: number;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const res = await fetch(`${base}${path}`, init);
  if (!res.ok) {
    const text = await res.text().catch(() => "");
    throw new ApiError(res.status, text.slice(0, 240));
  }
  return (await res.json()) as T;
}

export class StudioApi {
  constructor(private base: string = "") {}

  health(): Promise<HealthInfo> {
    return request<HealthInfo>(this.base, "/api/health");
  }

  async submitInpaint(imageB64: string, maskB64: string, settings: InpaintSettings): Promise<string> {
    const body = {
      image: imageB64,
      mask: maskB64,
      prompt: settings.prompt,
      steps: settings.steps,
      guidance: settings.guidance,
      w: settings.w,
      seed: settings.seed,
    };
    const doc = await request<{ job_id: string }>(this.base, "/api/inpaint", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    return doc.job_id;
  }

  getJob(jobId: string): Promise<JobState> {
    return request<JobState>(this.base, `/api/jobs/${jobId}`);
  }

  async simulateMask(segB64: string, kind: "box" | "irr" | "seg" | "mix", seed: number): Promise<string> {
    const doc = await request<{ mask: string }>(this.base, "/api/mask/simulate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ seg: segB64, kind, seed }),
    });
    return doc.mask;
  }

  /** Poll until the job settles; onTick fires with every observed state. */
  async pollJob(
    jobId: string,
    onTick?: (state: JobState) => void,
    intervalMs = 500,
    timeoutMs = 600_000
  ): Promise<JobState> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const state = await this.getJob(jobId);
      onTick?.(state);
      if (state.state === "done" || state.state === "failed") return state;
      if (Date.now() > deadline) throw new ApiError(408, `job ${jobId} timed out`);
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }
}
