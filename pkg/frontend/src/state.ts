// Editor state and its pure transitions.  The DOM layer and the service
// client both sit on top of these functions, which keeps the interesting
// behavior (drag clamping, seed locking, request construction) testable
// without a browser.

import type {
  Consistency,
  GenerateRequest,
  GenerateResponse,
  LayoutDoc,
  LayoutObject,
  PairResponse,
  VocabResponse,
} from "./types.js";
import { MAX_ATTRIBUTES, validateLayout } from "./validate.js";

export type RegenerateMode = "fresh" | "locked-seeds" | "shifted-pair";

export interface EditorState {
  layout: LayoutDoc;
  vocab: VocabResponse | null;
  // per-object locked seed, or null when the next generation may reroll it
  seedLocks: (number | null)[];
  selected: number | null;
  current: GenerateResponse | null;
  // pre-drag snapshot for the shifted-pair comparison
  compareBase: LayoutDoc | null;
  pairView: { original: GenerateResponse; shifted: GenerateResponse } | null;
  consistency: Consistency | null;
  lastError: string | null;
}

export function initialState(canvas: number, vocab: VocabResponse | null): EditorState {
  return {
    layout: { canvas: { width: canvas, height: canvas }, objects: [] },
    vocab,
    seedLocks: [],
    selected: null,
    current: null,
    compareBase: null,
    pairView: null,
    consistency: null,
    lastError: null,
  };
}

const clamp01 = (v: number) => Math.min(Math.max(v, 0), 1);

function withObjects(state: EditorState, objects: LayoutObject[]): EditorState {
  return { ...state, layout: { ...state.layout, objects } };
}

export function addObject(state: EditorState, category: string,
                          bbox: [number, number, number, number]): EditorState {
  const objects = [...state.layout.objects, { category, attributes: [], bbox }];
  return {
    ...withObjects(state, objects),
    seedLocks: [...state.seedLocks, null],
    selected: objects.length - 1,
  };
}

export function removeObject(state: EditorState, id: number): EditorState {
  const objects = state.layout.objects.filter((_, i) => i !== id);
  const seedLocks = state.seedLocks.filter((_, i) => i !== id);
  return { ...withObjects(state, objects), seedLocks, selected: null, compareBase: null };
}

export function selectObject(state: EditorState, id: number | null): EditorState {
  return { ...state, selected: id };
}

/** Translate a box by a drag delta with live clamping to the canvas.
 *  Horizontal-only unless allowVertical (off-distribution, behind a toggle).
 *  The first drag of a sequence records the pre-drag layout so the
 *  shifted-pair view can compare against it. */
export function editBox(state: EditorState, id: number, dx: number, dy = 0,
                        allowVertical = false): EditorState {
  const obj = state.layout.objects[id];
  if (!obj) return state;
  const [x0, y0, x1, y1] = obj.bbox;
  const effDx = Math.min(Math.max(dx, -x0), 1 - x1);
  let bbox: [number, number, number, number] = [x0 + effDx, y0, x1 + effDx, y1];
  if (allowVertical && dy !== 0) {
    const effDy = Math.min(Math.max(dy, -y0), 1 - y1);
    bbox = [bbox[0], y0 + effDy, bbox[2], y1 + effDy];
  }
  bbox = [clamp01(bbox[0]), clamp01(bbox[1]), clamp01(bbox[2]), clamp01(bbox[3])];
  const objects = state.layout.objects.map((o, i) => (i === id ? { ...o, bbox } : o));
  const compareBase = state.compareBase ?? structuredClone(state.layout);
  return { ...withObjects(state, objects), compareBase };
}

/** Replace an object's attribute set; invalid input reports inline and
 *  leaves the state untouched. */
export function setAttributes(state: EditorState, id: number, names: string[]): EditorState {
  const obj = state.layout.objects[id];
  if (!obj) return state;
  if (names.length > MAX_ATTRIBUTES) {
    return { ...state, lastError: `at most ${MAX_ATTRIBUTES} attributes per object` };
  }
  if (state.vocab) {
    const unknown = names.find((n) => !state.vocab!.attributes.includes(n));
    if (unknown !== undefined) {
      return { ...state, lastError: `unknown attribute "${unknown}"` };
    }
  }
  const objects = state.layout.objects.map((o, i) =>
    i === id ? { ...o, attributes: [...names] } : o);
  return { ...withObjects(state, objects), lastError: null };
}

/** Capture the current response's resolved seeds as per-object locks. */
export function lockSeeds(state: EditorState): EditorState {
  if (!state.current) return { ...state, lastError: "generate once before locking seeds" };
  return { ...state, seedLocks: [...state.current.object_seeds], lastError: null };
}

/** Drop locks (one object or all) so the next generation rerolls them. */
export function rerollSeeds(state: EditorState, id?: number): EditorState {
  if (id === undefined) return { ...state, seedLocks: state.layout.objects.map(() => null) };
  return { ...state, seedLocks: state.seedLocks.map((s, i) => (i === id ? null : s)) };
}

/** Build the generation request for a mode; null when the layout would be
 *  rejected by the service (the UI never sends such a request). */
export function buildRequest(state: EditorState, mode: RegenerateMode,
                             freshSeed?: number): GenerateRequest | null {
  if (validateLayout(state.layout, state.vocab).length > 0) return null;
  const layout = structuredClone(state.layout);
  for (const obj of layout.objects) {
    // an empty set means "unspecified": omit the key so the service samples
    if (!obj.attributes || obj.attributes.length === 0) delete obj.attributes;
  }
  const req: GenerateRequest = { v: 1, layout };
  if (mode === "locked-seeds" || mode === "shifted-pair") {
    if (state.current) req.seed = state.current.seed;
    if (state.seedLocks.some((s) => s !== null)) req.object_seeds = [...state.seedLocks];
    else if (state.current) req.object_seeds = [...state.current.object_seeds];
  } else {
    // fresh: locked objects keep their seeds, the rest reroll
    if (freshSeed !== undefined) req.seed = freshSeed;
    if (state.seedLocks.some((s) => s !== null)) req.object_seeds = [...state.seedLocks];
  }
  return req;
}

/** Per-object horizontal offsets between the comparison base and the
 *  current layout (what /generate/pair expects). */
export function dragShifts(state: EditorState): number[] | null {
  if (!state.compareBase) return null;
  if (state.compareBase.objects.length !== state.layout.objects.length) return null;
  return state.layout.objects.map((o, i) => o.bbox[0] - state.compareBase!.objects[i].bbox[0]);
}

export function applyResponse(state: EditorState, resp: GenerateResponse): EditorState {
  return { ...state, current: resp, pairView: null, consistency: null, lastError: null };
}

export function applyPairResponse(state: EditorState, resp: PairResponse): EditorState {
  return {
    ...state,
    current: resp.original,
    pairView: { original: resp.original, shifted: resp.shifted },
    consistency: resp.consistency,
    lastError: null,
  };
}

export function clearComparison(state: EditorState): EditorState {
  return { ...state, compareBase: null, pairView: null, consistency: null };
}
