// Thin fetch client for the generation service.  A transport function is
// injectable so tests can run against an in-memory fake.

import type {
  GenerateRequest,
  GenerateResponse,
  PairRequest,
  PairResponse,
  ServiceError,
  VocabResponse,
} from "./types.js";

export type Transport = (path: string, init?: RequestInit) => Promise<Response>;

export class ServiceClientError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

async function parse<T>(resp: Response): Promise<T> {
  const body = await resp.json();
  if (!resp.ok) {
    const err = body as ServiceError;
    throw new ServiceClientError(err.error?.code ?? "Unknown",
                                 err.error?.message ?? resp.statusText, resp.status);
  }
  return body as T;
}

export class ServiceClient {
  constructor(private baseUrl: string = "",
              private transport: Transport = (p, init) => fetch(p, init)) {}

  private post(path: string, body: unknown): Promise<Response> {
    return this.transport(this.baseUrl + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async vocab(): Promise<VocabResponse> {
    return parse(await this.transport(this.baseUrl + "/vocab"));
  }

  async generate(req: GenerateRequest): Promise<GenerateResponse> {
    return parse(await this.post("/generate", req));
  }

  async generatePair(req: PairRequest): Promise<PairResponse> {
    return parse(await this.post("/generate/pair", req));
  }
}
