/** Typed client for the stylization service. Images travel as base64 PNG. */

export interface StyleInfo {
  name: string;
  kernel_size: number;
}

export interface SegmentResult {
  labels: string; // base64 PNG label map at image resolution
  k: number;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function post<T>(base: string, path: string, body: unknown): Promise<T> {
  const resp = await fetch(base + path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!resp.ok) {
    let detail = `${resp.status}`;
    try {
      const payload = await resp.json();
      if (payload && typeof payload.detail === "string") detail = payload.detail;
    } catch {
      /* non-JSON error body; keep the status text */
    }
    throw new ServiceError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  async styles(): Promise<StyleInfo[]> {
    const resp = await fetch(this.base + "/styles");
    if (!resp.ok) throw new ServiceError(resp.status, "could not list styles");
    const body = (await resp.json()) as { styles: StyleInfo[] };
    return body.styles;
  }

  async stylize(image: string, style: string): Promise<string> {
    const body = await post<{ image: string }>(this.base, "/stylize", { image, style });
    return body.image;
  }

  async fuse(image: string, weights: Record<string, number>): Promise<string> {
    const body = await post<{ image: string }>(this.base, "/fuse", { image, weights });
    return body.image;
  }

  async segment(image: string, k: number): Promise<SegmentResult> {
    return post<SegmentResult>(this.base, "/segment", { image, k });
  }

  async fuseRegions(
    image: string,
    labels: string,
    assignment: Record<string, string>,
  ): Promise<string> {
    const body = await post<{ image: string }>(this.base, "/fuse-regions", {
      image,
      labels,
      assignment,
    });
    return body.image;
  }
}
