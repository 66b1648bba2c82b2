/** Typed client for the inference service. The UI never computes model
 * math itself: every displayed number comes out of these responses. */

export interface Meta {
  dims: number[];
  param_names: string[];
  param_ranges: Record<string, [number, number]>;
  members: { id: string; params: Record<string, number>; timesteps: number }[];
  splits: { train: string[]; val: string[]; test: string[] };
  flow_scale: number;
}

export interface SlicePayload {
  axis: string;
  index: number;
  width: number;
  height: number;
  data: string; // base64 little-endian f32
}

export interface FlowSlicePayload {
  axis: string;
  index: number;
  width: number;
  height: number;
  components: string[]; // 3x base64 little-endian f32
}

export interface InferResponse {
  member_id: string;
  s: number;
  u: number;
  t: number;
  params: number[];
  density_slice: SlicePayload;
  flow_slice: FlowSlicePayload;
  psnr_vs_gt?: number | null;
}

export interface SimilarityResponse {
  member_ids: string[];
  weight: number[][];
  data: number[][];
  triplet_correlation: number;
}

export interface InferRequest {
  member_id: string;
  s: number;
  u: number;
  t: number;
  params?: number[];
  axis?: string;
  index?: number;
}

/** Decode a base64 string of little-endian float32 values. */
export function decodeF32(b64: string): Float32Array {
  const raw = atob(b64);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  return new Float32Array(bytes.buffer);
}

export class ApiClient {
  constructor(private base: string = "") {}

  async meta(): Promise<Meta> {
    const r = await fetch(this.base + "/api/meta");
    if (!r.ok) throw new Error(`meta failed: ${r.status}`);
    return r.json();
  }

  async similarity(): Promise<SimilarityResponse | null> {
    const r = await fetch(this.base + "/api/similarity");
    if (r.status === 404) return null;
    if (!r.ok) throw new Error(`similarity failed: ${r.status}`);
    return r.json();
  }

  async infer(req: InferRequest): Promise<InferResponse> {
    const r = await fetch(this.base + "/api/infer", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!r.ok) throw new Error(`infer failed: ${r.status}`);
    return r.json();
  }
}
