// Browser entrypoint: wires the editing session to the DOM. All mask edits
// land in the MaskBitmap; the canvas is a pure view of image + overlay.

import { StudioApi } from "./api.js";
import { Point, Tool } from "./mask.js";
import { fromBase64 } from "./png.js";
import { CanvasSession } from "./session.js";

const api = new StudioApi("");

let session: CanvasSession | null = null;
let sourceBitmap: ImageBitmap | null = null;
let tool: Tool = "brush";
let dragStart: Point | null = null;
let strokePoints: Point[] = [];
// bitmap from before the active gesture; moves preview on top of it, the
// commit on pointerup records exactly one undo entry for the whole stroke
let strokeBase: import("./mask.js").MaskBitmap | null = null;

const el = <T extends HTMLElement>(id: string): T => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
};

const canvas = () => el<HTMLCanvasElement>("canvas");
const status = (text: string) => {
  el<HTMLSpanElement>("status").textContent = text;
};

function brushWidth(): number {
  return Number(el<HTMLInputElement>("brush-width").value);
}

function redraw(): void {
  if (!session || !sourceBitmap) return;
  const cv = canvas();
  const ctx = cv.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, cv.width, cv.height);
  ctx.drawImage(sourceBitmap, 0, 0);
  const overlay = ctx.getImageData(0, 0, cv.width, cv.height);
  const data = overlay.data;
  const mask = session.mask.data;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 1) {
      data[i * 4] = Math.min(255, data[i * 4] * 0.4 + 200);
      data[i * 4 + 1] = data[i * 4 + 1] * 0.4;
      data[i * 4 + 2] = data[i * 4 + 2] * 0.4;
    }
  }
  ctx.putImageData(overlay, 0, 0);
}

function canvasPoint(ev: PointerEvent): Point {
  const cv = canvas();
  const rect = cv.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * cv.width,
    y: ((ev.clientY - rect.top) / rect.height) * cv.height,
  };
}

function refreshControls(): void {
  const submit = el<HTMLButtonElement>("submit");
  if (!session) {
    submit.disabled = true;
    return;
  }
  const blocker = session.submitBlocker();
  submit.disabled = blocker !== null;
  submit.title = blocker ?? "run inpainting";
  el<HTMLSpanElement>("hint").textContent = blocker ?? "";
}

function pullSettings(): void {
  if (!session) return;
  session.settings = {
    prompt: el<HTMLInputElement>("prompt").value,
    steps: Number(el<HTMLInputElement>("steps").value),
    guidance: Number(el<HTMLInputElement>("guidance").value),
    w: Number(el<HTMLInputElement>("preserve-w").value),
    seed: Number(el<HTMLInputElement>("seed").value),
  };
  refreshControls();
}

async function loadImage(bytes: Uint8Array): Promise<void> {
  session = new CanvasSession(bytes);
  const blob = new Blob([bytes as BlobPart], { type: "image/png" });
  sourceBitmap = await createImageBitmap(blob);
  const cv = canvas();
  cv.width = session.width;
  cv.height = session.height;
  el<HTMLImageElement>("result").removeAttribute("src");
  el<HTMLButtonElement>("adopt").disabled = true;
  status(`loaded ${session.width}x${session.height}`);
  redraw();
  refreshControls();
}

function wireTools(): void {
  for (const name of ["brush", "box", "erase"] as Tool[]) {
    el<HTMLButtonElement>(`tool-${name}`).addEventListener("click", () => {
      tool = name;
      for (const other of ["brush", "box", "erase"]) {
        el(`tool-${other}`).classList.toggle("active", other === name);
      }
    });
  }

  const cv = canvas();
  cv.addEventListener("pointerdown", (ev) => {
    if (!session) return;
    cv.setPointerCapture(ev.pointerId);
    const p = canvasPoint(ev);
    strokeBase = session.mask.clone();
    if (tool === "box") {
      dragStart = p;
    } else {
      strokePoints = [p];
    }
  });
  cv.addEventListener("pointermove", (ev) => {
    if (!session || !strokeBase) return;
    // live preview: rebuild from the pre-gesture bitmap, no undo entries yet
    if (tool === "box" && dragStart) {
      session.mask.assign(strokeBase);
      session.mask.fillBox(dragStart, canvasPoint(ev));
      redraw();
    } else if (tool !== "box" && strokePoints.length > 0) {
      strokePoints.push(canvasPoint(ev));
      session.mask.assign(strokeBase);
      session.mask.brushStroke(strokePoints, brushWidth(), tool === "erase" ? 0 : 1);
      redraw();
    }
  });
  cv.addEventListener("pointerup", (ev) => {
    if (!session || !strokeBase) return;
    const p = canvasPoint(ev);
    // commit: restore the base, then apply the whole gesture as one action
    session.mask.assign(strokeBase);
    if (tool === "box" && dragStart) {
      session.drawMask("box", { from: dragStart, to: p });
      dragStart = null;
    } else if (strokePoints.length > 0) {
      session.drawMask(tool, { points: strokePoints, brushWidth: brushWidth() });
    }
    strokeBase = null;
    strokePoints = [];
    redraw();
    refreshControls();
  });

  el<HTMLButtonElement>("undo").addEventListener("click", () => {
    session?.undo();
    redraw();
    refreshControls();
  });
  el<HTMLButtonElement>("clear").addEventListener("click", () => {
    session?.clearMask();
    redraw();
    refreshControls();
  });
}

function wireSimulate(): void {
  for (const kind of ["box", "irr", "mix"] as const) {
    el<HTMLButtonElement>(`sim-${kind}`).addEventListener("click", async () => {
      if (!session) return;
      try {
        status(`simulating ${kind} mask...`);
        await session.simulateFromMask(api, kind, session.settings.seed);
        redraw();
        refreshControls();
        status(`simulated ${kind} mask`);
      } catch (err) {
        status(err instanceof Error ? err.message : String(err));
      }
    });
  }
}

function wireSubmit(): void {
  el<HTMLButtonElement>("submit").addEventListener("click", async () => {
    if (!session) return;
    pullSettings();
    refreshControls();
    try {
      const final = await session.submitAndPoll(api, (state) => {
        status(`job ${state.state}`);
        refreshControls();
      });
      if (final.state === "done" && final.result) {
        const img = el<HTMLImageElement>("result");
        img.src = `data:image/png;base64,${final.result.image}`;
        el<HTMLButtonElement>("adopt").disabled = false;
        status(`done in ${final.result.timing_s.toFixed(1)}s`);
      } else {
        status(`failed: ${final.error}`);
      }
    } catch (err) {
      status(err instanceof Error ? err.message : String(err));
    }
    refreshControls();
  });

  el<HTMLButtonElement>("adopt").addEventListener("click", async () => {
    if (!session?.resultPngB64) return;
    const bytes = fromBase64(session.resultPngB64);
    const settings = { ...session.settings };
    await loadImage(bytes);
    if (session) {
      (session as CanvasSession).settings = settings;
    }
    status("result adopted as new source");
  });
}

async function init(): Promise<void> {
  wireTools();
  wireSimulate();
  wireSubmit();
  el<HTMLInputElement>("file").addEventListener("change", async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (file) {
      await loadImage(new Uint8Array(await file.arrayBuffer()));
    }
  });
  for (const id of ["prompt", "steps", "guidance", "preserve-w", "seed"]) {
    el<HTMLInputElement>(id).addEventListener("input", pullSettings);
  }
  try {
    const health = await api.health();
    el<HTMLSpanElement>("preset").textContent = `model: ${health.preset}`;
  } catch {
    el<HTMLSpanElement>("preset").textContent = "service unreachable";
  }
  refreshControls();
}

init();
