// Wire schemas of the generation service (all messages carry v: 1).

export interface CanvasSize {
  width: number;
  height: number;
}

export interface LayoutObject {
  category: string;
  // omitted entirely => the service samples attributes from its prior
  attributes?: string[];
  bbox: [number, number, number, number]; // x0, y0, x1, y1 in [0, 1]
}

export interface LayoutDoc {
  canvas: CanvasSize;
  objects: LayoutObject[];
}

export interface GenerateRequest {
  v: 1;
  layout: LayoutDoc;
  seed?: number;
  object_seeds?: (number | null)[];
}

export interface ModelInfo {
  checkpoint_hash: string;
  config_hash: string;
}

export interface GenerateResponse {
  v: 1;
  image_png_base64: string;
  seed: number;
  object_seeds: number[];
  resolved_attributes: string[][];
  model: ModelInfo;
}

export interface ShiftSpec {
  dx: number[];
  policy: "clamp" | "reject";
}

export interface PairRequest {
  v: 1;
  request: GenerateRequest;
  shifts: ShiftSpec;
}

export interface Consistency {
  bg: number;
  fg: number;
}

export interface PairResponse {
  v: 1;
  original: GenerateResponse;
  shifted: GenerateResponse;
  consistency: Consistency;
}

export interface VocabResponse {
  v: 1;
  categories: string[];
  attributes: string[];
  prior_summary: { attribute_totals: Record<string, number> };
}

export interface ServiceError {
  v: 1;
  error: { code: string; message: string };
}
