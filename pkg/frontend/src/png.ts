/** Canvas-backed PNG <-> label buffer conversion (browser only).
 *
 * Labels ride the red channel with r=g=b, which round-trips losslessly
 * through PNG and through the service's grayscale decode.
 */

import { LabelBuffer } from "./labels.js";

export function base64ToBytes(b64: string): Uint8Array {
  const binary = atob(b64);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}

export function bytesToBase64(bytes: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000;
  for (let i = 0; i < bytes.length; i += chunk) {
    binary += String.fromCharCode(...bytes.subarray(i, i + chunk));
  }
  return btoa(binary);
}

export async function decodeLabelPng(b64: string): Promise<LabelBuffer> {
  const blob = new Blob([base64ToBytes(b64).buffer as ArrayBuffer], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const pixels = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const data = new Uint8Array(bitmap.width * bitmap.height);
  for (let i = 0; i < data.length; i++) data[i] = pixels[i * 4];
  return { data, width: bitmap.width, height: bitmap.height };
}

export async function encodeLabelPng(buf: LabelBuffer): Promise<string> {
  const canvas = document.createElement("canvas");
  canvas.width = buf.width;
  canvas.height = buf.height;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(buf.width, buf.height);
  for (let i = 0; i < buf.data.length; i++) {
    const v = buf.data[i];
    img.data[i * 4] = v;
    img.data[i * 4 + 1] = v;
    img.data[i * 4 + 2] = v;
    img.data[i * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  const blob: Blob = await new Promise((resolve, reject) =>
    canvas.toBlob((b) => (b ? resolve(b) : reject(new Error("PNG encode failed"))), "image/png"),
  );
  return bytesToBase64(new Uint8Array(await blob.arrayBuffer()));
}
