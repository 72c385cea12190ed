/** Thin typed client for the motion service. Errors carry the server's
 * error envelope message when present. */

import { EditResponse, EditTask, GenerateResponse, LabelInfo, Span } from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

export interface GenerateParams {
  label: number;
  length?: number;
  seed?: number;
}

export interface EditParams {
  label: number;
  task: EditTask;
  tokens?: number[];
  frames?: number[][];
  spans?: Span[];
  seed?: number;
}

async function parseOrThrow<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => null);
  if (!resp.ok) {
    const message =
      body && typeof body === "object" && "error" in body
        ? (body as { error: { message: string } }).error.message
        : `HTTP ${resp.status}`;
    throw new ApiError(message, resp.status);
  }
  return body as T;
}

export class MotionApi {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  setBaseUrl(url: string): void {
    this.baseUrl = url.replace(/\/+$/, "");
  }

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    return parseOrThrow<T>(resp);
  }

  async health(): Promise<{ status: string; version: string }> {
    return parseOrThrow(await this.fetchFn(`${this.baseUrl}/health`));
  }

  async labels(): Promise<LabelInfo[]> {
    const body = await parseOrThrow<{ labels: LabelInfo[] }>(
      await this.fetchFn(`${this.baseUrl}/labels`),
    );
    return body.labels;
  }

  async generate(params: GenerateParams): Promise<GenerateResponse> {
    return this.post("/generate", params);
  }

  async edit(params: EditParams): Promise<EditResponse> {
    const payload: Record<string, unknown> = {
      label: params.label,
      task: params.task,
      seed: params.seed,
    };
    if (params.tokens) payload.tokens = params.tokens;
    else payload.frames = params.frames;
    if (params.spans) payload.spans = params.spans.map((s) => [s.start, s.end]);
    return this.post("/edit", payload);
  }

  async tokenize(frames: number[][]): Promise<number[][]> {
    const body = await this.post<{ token_grid: number[][] }>("/tokenize", { frames });
    return body.token_grid;
  }

  async detokenize(tokenGrid: number[][]): Promise<number[][]> {
    const body = await this.post<{ frames: number[][] }>("/detokenize", {
      token_grid: tokenGrid,
    });
    return body.frames;
  }
}
