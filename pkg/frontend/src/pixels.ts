/**
 * Image payload handling: queued samples arrive as base64 of raw uint8
 * pixels in row-major (height, width, channels) order, channels 1 or 3.
 * Upscaling is nearest-neighbor so pixel-level artifacts stay visible on
 * the low-resolution datasets this tool exists for.
 */

export interface RawImage {
  width: number;
  height: number;
  channels: number;
  bytes: Uint8Array;
}

export function decodeImage(
  base64: string,
  width: number,
  height: number,
  channels: number,
): RawImage {
  const binary = atob(base64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  if (bytes.length !== width * height * channels) {
    throw new Error(
      `image payload is ${bytes.length} bytes, expected ${width * height * channels}`,
    );
  }
  return { width, height, channels, bytes };
}

/** Expand grayscale or RGB bytes to RGBA with opaque alpha. */
export function toRGBA(img: RawImage): Uint8ClampedArray {
  const n = img.width * img.height;
  const out = new Uint8ClampedArray(n * 4);
  for (let i = 0; i < n; i++) {
    if (img.channels === 1) {
      const v = img.bytes[i];
      out[i * 4] = v;
      out[i * 4 + 1] = v;
      out[i * 4 + 2] = v;
    } else {
      out[i * 4] = img.bytes[i * 3];
      out[i * 4 + 1] = img.bytes[i * 3 + 1];
      out[i * 4 + 2] = img.bytes[i * 3 + 2];
    }
    out[i * 4 + 3] = 255;
  }
  return out;
}

/** Nearest-neighbor upscale of an RGBA buffer by an integer factor. */
export function upscaleNearest(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  scale: number,
): Uint8ClampedArray {
  const ow = width * scale;
  const out = new Uint8ClampedArray(ow * height * scale * 4);
  for (let y = 0; y < height * scale; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < ow; x++) {
      const si = (sy * width + Math.floor(x / scale)) * 4;
      const di = (y * ow + x) * 4;
      out[di] = rgba[si];
      out[di + 1] = rgba[si + 1];
      out[di + 2] = rgba[si + 2];
      out[di + 3] = rgba[si + 3];
    }
  }
  return out;
}

/** Pick an integer factor that lands the longer edge near the target size. */
export function displayScale(width: number, height: number, target = 160): number {
  return Math.max(1, Math.floor(target / Math.max(width, height)));
}

/**
 * Paint an image onto a canvas at the given scale. Returns false when the
 * 2D context is unavailable (non-browser DOM); the canvas is still sized.
 */
export function drawImageScaled(
  canvas: HTMLCanvasElement,
  img: RawImage,
  scale: number,
): boolean {
  canvas.width = img.width * scale;
  canvas.height = img.height * scale;
  const ctx = canvas.getContext("2d");
  if (!ctx) return false;
  const scaled = upscaleNearest(toRGBA(img), img.width, img.height, scale);
  const image = ctx.createImageData(canvas.width, canvas.height);
  image.data.set(scaled);
  ctx.putImageData(image, 0, 0);
  return true;
}
