// Binary mask layer: the single source of truth for what gets inpainted.
// The canvas only *displays* it; strokes are rasterized here so the exported
// PNG is exactly the bitmap the user built (no anti-aliased edge dust).

import { encodePng, RawImage } from "./png.js";

export type Tool = "brush" | "box" | "erase";

export interface Point {
  x: number;
  y: number;
}

export class MaskBitmap {
  readonly width: number;
  readonly height: number;
  readonly data: Uint8Array; // values strictly 0 or 1

  constructor(width: number, height: number, data?: Uint8Array) {
    if (width < 1 || height < 1) throw new Error(`bad mask dims ${width}x${height}`);
    this.width = width;
    this.height = height;
    this.data = data ?? new Uint8Array(width * height);
    if (this.data.length !== width * height) {
      throw new Error("mask buffer does not match dims");
    }
  }

  clone(): MaskBitmap {
    return new MaskBitmap(this.width, this.height, this.data.slice());
  }

  equals(other: MaskBitmap): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  count(): number {
    let n = 0;
    for (let i = 0; i < this.data.length; i++) n += this.data[i];
    return n;
  }

  isSupersetOf(other: MaskBitmap): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (other.data[i] === 1 && this.data[i] === 0) return false;
    }
    return true;
  }

  private stamp(cx: number, cy: number, radius: number, value: 0 | 1): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /** Rasterize a brush stroke as stamped discs along each polyline segment. */
  brushStroke(points: Point[], brushWidth: number, value: 0 | 1 = 1): void {
    if (points.length === 0) return;
    const radius = Math.max(0.5, brushWidth / 2);
    let prev = points[0];
    this.stamp(prev.x, prev.y, radius, value);
    for (const next of points.slice(1)) {
      const dist = Math.hypot(next.x - prev.x, next.y - prev.y);
      const steps = Math.max(1, Math.ceil(dist));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp(prev.x + (next.x - prev.x) * t, prev.y + (next.y - prev.y) * t, radius, value);
      }
      prev = next;
    }
  }

  /** Filled axis-aligned rectangle between two drag corners (inclusive). */
  fillBox(a: Point, b: Point, value: 0 | 1 = 1): void {
    const x0 = Math.max(0, Math.min(Math.round(a.x), Math.round(b.x)));
    const x1 = Math.min(this.width - 1, Math.max(Math.round(a.x), Math.round(b.x)));
    const y0 = Math.max(0, Math.min(Math.round(a.y), Math.round(b.y)));
    const y1 = Math.min(this.height - 1, Math.max(Math.round(a.y), Math.round(b.y)));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        this.data[y * this.width + x] = value;
      }
    }
  }

  clear(): void {
    this.data.fill(0);
  }

  /** Replace contents from another bitmap of identical dims. */
  assign(other: MaskBitmap): void {
    if (other.width !== this.width || other.height !== this.height) {
      throw new Error("mask dims disagree");
    }
    this.data.set(other.data);
  }

  /** Export as 8-bit grayscale PNG bytes, 255 = inpaint (service polarity). */
  toPng(): Uint8Array {
    const pixels = new Uint8Array(this.data.length);
    for (let i = 0; i < this.data.length; i++) pixels[i] = this.data[i] ? 255 : 0;
    const image: RawImage = { width: this.width, height: this.height, channels: 1, pixels };
    return encodePng(image);
  }

  static fromGray(width: number, height: number, gray: Uint8Array): MaskBitmap {
    const data = new Uint8Array(width * height);
    for (let i = 0; i < data.length; i++) data[i] = gray[i] >= 128 ? 1 : 0;
    return new MaskBitmap(width, height, data);
  }
}

/** Apply one tool action; returns the bitmap that should go on the undo stack. */
export function applyTool(
  mask: MaskBitmap,
  tool: Tool,
  geometry: { points?: Point[]; from?: Point; to?: Point; brushWidth?: number }
): MaskBitmap {
  const before = mask.clone();
  const width = geometry.brushWidth ?? 16;
  if (tool === "brush") {
    mask.brushStroke(geometry.points ?? [], width, 1);
  } else if (tool === "erase") {
    mask.brushStroke(geometry.points ?? [], width, 0);
  } else {
    if (!geometry.from || !geometry.to) throw new Error("box tool needs from/to corners");
    mask.fillBox(geometry.from, geometry.to, 1);
  }
  return before;
}
