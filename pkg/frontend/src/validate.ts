// Client-side mirror of the service's layout validation, so the editor
// never submits a request the server would reject.

import type { LayoutDoc, VocabResponse } from "./types.js";

export const MAX_ATTRIBUTES = 5;
export const MAX_OBJECTS = 30;

export interface Violation {
  object: number | null; // null => layout-level problem
  code: string;
  message: string;
}

export function validateLayout(layout: LayoutDoc, vocab: VocabResponse | null): Violation[] {
  const out: Violation[] = [];
  if (layout.canvas.width <= 0 || layout.canvas.width !== layout.canvas.height) {
    out.push({ object: null, code: "InvalidBBox", message: "canvas must be square and positive" });
  }
  if (layout.objects.length === 0) {
    out.push({ object: null, code: "EmptyLayout", message: "add at least one object" });
  }
  if (layout.objects.length > MAX_OBJECTS) {
    out.push({ object: null, code: "TooManyObjects", message: `at most ${MAX_OBJECTS} objects` });
  }
  layout.objects.forEach((obj, i) => {
    const [x0, y0, x1, y1] = obj.bbox;
    if (!(x0 >= 0 && x0 < x1 && x1 <= 1 && y0 >= 0 && y0 < y1 && y1 <= 1)) {
      out.push({ object: i, code: "InvalidBBox", message: `object ${i}: bad box [${obj.bbox}]` });
    }
    const attrs = obj.attributes ?? [];
    if (attrs.length > MAX_ATTRIBUTES) {
      out.push({
        object: i,
        code: "TooManyAttributes",
        message: `object ${i}: at most ${MAX_ATTRIBUTES} attributes`,
      });
    }
    if (new Set(attrs).size !== attrs.length) {
      out.push({ object: i, code: "UnknownIndex", message: `object ${i}: duplicate attributes` });
    }
    if (vocab) {
      if (!vocab.categories.includes(obj.category)) {
        out.push({
          object: i,
          code: "UnknownIndex",
          message: `object ${i}: unknown category "${obj.category}"`,
        });
      }
      for (const a of attrs) {
        if (!vocab.attributes.includes(a)) {
          out.push({ object: i, code: "UnknownIndex", message: `object ${i}: unknown attribute "${a}"` });
        }
      }
    }
  });
  return out;
}

export function isValid(layout: LayoutDoc, vocab: VocabResponse | null): boolean {
  return validateLayout(layout, vocab).length === 0;
}
