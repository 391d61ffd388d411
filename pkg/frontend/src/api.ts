/** Typed client for the generation service HTTP API. */

export interface ClipInfo {
  id: string;
  duration: number;
  fps: number;
  n_frames: number;
  n_onsets: number;
}

export interface ClipOnsets {
  clip_id: string;
  fps: number;
  onsets: number[];
}

export type Conditioning =
  | { modality: "text"; payload: string }
  | { modality: "audio"; payload: string };

export interface SamplerOverrides {
  steps?: number;
  cfg_scale?: number;
  seed?: number;
}

export interface GenerateRequest {
  duration: number;
  onsets: number[];
  conditioning: Conditioning;
  sampler?: SamplerOverrides;
}

export interface JobResult {
  audio_url: string;
  sample_rate: number;
  extracted_onsets: number[];
  requested_onsets: number[];
  sync_rate: number | null;
  tolerance: number;
}

export type JobState =
  | { id: string; state: "queued" | "running" }
  | { id: string; state: "done"; result: JobResult }
  | { id: string; state: "failed"; error: string };

/** Server-reported failure: carries the machine-readable error code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, "network", `cannot reach ${this.baseUrl}: ${err}`);
    }
    const body = await res.json().catch(() => null);
    if (!res.ok) {
      const code = body?.error?.code ?? "http_error";
      const message = body?.error?.message ?? `HTTP ${res.status}`;
      throw new ApiError(res.status, code, message);
    }
    return body as T;
  }

  async listClips(): Promise<ClipInfo[]> {
    const body = await this.request<{ clips: ClipInfo[] }>("/clips");
    return body.clips;
  }

  clipOnsets(clipId: string): Promise<ClipOnsets> {
    return this.request(`/clips/${encodeURIComponent(clipId)}/onsets`);
  }

  videoUrl(clipId: string): string {
    return `${this.baseUrl}/clips/${encodeURIComponent(clipId)}/video`;
  }

  async fetchVideo(clipId: string): Promise<ArrayBuffer> {
    const res = await this.fetchImpl(this.videoUrl(clipId));
    if (!res.ok) {
      throw new ApiError(res.status, "unknown_clip", `no video for ${clipId}`);
    }
    return res.arrayBuffer();
  }

  async generate(req: GenerateRequest): Promise<string> {
    const body = await this.request<{ job_id: string }>("/generate", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    return body.job_id;
  }

  job(jobId: string): Promise<JobState> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}`);
  }

  audioUrl(jobId: string): string {
    return `${this.baseUrl}/audio/${encodeURIComponent(jobId)}`;
  }
}
