// DOM layer: canvas box editor, attribute picker, seed controls, and the
// result panes.  All behavior lives in state.ts/controller.ts; this file
// only renders and forwards events.

import { ServiceClient } from "./client.js";
import { EditorController } from "./controller.js";
import {
  addObject,
  clearComparison,
  editBox,
  initialState,
  lockSeeds,
  removeObject,
  rerollSeeds,
  selectObject,
  setAttributes,
  type EditorState,
} from "./state.js";
import type { VocabResponse } from "./types.js";

const EDITOR_SIDE = 384;
const PALETTE = ["#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4",
                 "#46f0f0", "#f032e6", "#bcf60c", "#fabebe", "#008080"];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const client = new ServiceClient("");
  let vocab: VocabResponse | null = null;
  try {
    vocab = await client.vocab();
  } catch {
    el<HTMLDivElement>("error").textContent =
      "service unreachable or no model loaded; start `layoutgen serve` first";
  }
  const modelDoc = vocab ? await (await fetch("/model")).json() : { canvas_size: 64 };
  const controller = new EditorController(
    initialState(modelDoc.canvas_size ?? 64, vocab), client, render);

  const canvas = el<HTMLCanvasElement>("editor");
  canvas.width = canvas.height = EDITOR_SIDE;
  const ctx = canvas.getContext("2d")!;

  // attribute names ordered by training-set frequency (most common first)
  const attrsByFrequency = vocab
    ? [...vocab.attributes].sort((a, b) =>
        (vocab!.prior_summary.attribute_totals[b] ?? 0)
        - (vocab!.prior_summary.attribute_totals[a] ?? 0))
    : [];

  function render(state: EditorState): void {
    ctx.fillStyle = "#2b2b2b";
    ctx.fillRect(0, 0, EDITOR_SIDE, EDITOR_SIDE);
    state.layout.objects.forEach((obj, i) => {
      const [x0, y0, x1, y1] = obj.bbox;
      ctx.strokeStyle = PALETTE[i % PALETTE.length];
      ctx.lineWidth = i === state.selected ? 3 : 1.5;
      ctx.strokeRect(x0 * EDITOR_SIDE, y0 * EDITOR_SIDE,
                     (x1 - x0) * EDITOR_SIDE, (y1 - y0) * EDITOR_SIDE);
      ctx.fillStyle = PALETTE[i % PALETTE.length];
      ctx.font = "12px sans-serif";
      const tag = state.seedLocks[i] !== null ? `${obj.category} \u{1F512}` : obj.category;
      ctx.fillText(tag, x0 * EDITOR_SIDE + 3, y0 * EDITOR_SIDE + 13);
    });

    const list = el<HTMLUListElement>("objects");
    list.innerHTML = "";
    state.layout.objects.forEach((obj, i) => {
      const li = document.createElement("li");
      li.textContent = `${i}: ${obj.category} [${(obj.attributes ?? []).join(", ")}]`;
      li.className = i === state.selected ? "selected" : "";
      li.onclick = () => controller.update(selectObject(controller.state, i));
      list.appendChild(li);
    });

    const picker = el<HTMLDivElement>("attributes");
    picker.innerHTML = "";
    if (state.selected !== null && vocab) {
      const current = new Set(state.layout.objects[state.selected]?.attributes ?? []);
      for (const name of attrsByFrequency) {
        const label = document.createElement("label");
        const box = document.createElement("input");
        box.type = "checkbox";
        box.checked = current.has(name);
        box.onchange = () => {
          const next = new Set(current);
          if (box.checked) next.add(name);
          else next.delete(name);
          controller.update(setAttributes(controller.state, state.selected!, [...next]));
        };
        label.appendChild(box);
        label.appendChild(document.createTextNode(name));
        picker.appendChild(label);
      }
    }

    const img = el<HTMLImageElement>("result");
    if (state.current) img.src = `data:image/png;base64,${state.current.image_png_base64}`;
    const pair = el<HTMLDivElement>("pair");
    pair.style.display = state.pairView ? "flex" : "none";
    if (state.pairView) {
      el<HTMLImageElement>("pair-a").src =
        `data:image/png;base64,${state.pairView.original.image_png_base64}`;
      el<HTMLImageElement>("pair-b").src =
        `data:image/png;base64,${state.pairView.shifted.image_png_base64}`;
      el<HTMLSpanElement>("consistency").textContent = state.consistency
        ? `consistency bg ${state.consistency.bg.toFixed(3)} / fg ${state.consistency.fg.toFixed(3)}`
        : "";
    }
    el<HTMLDivElement>("error").textContent = state.lastError ?? "";
    el<HTMLSpanElement>("seeds").textContent = state.current
      ? `seeds: ${state.current.object_seeds.map((s, i) =>
          state.seedLocks[i] !== null ? `${s}\u{1F512}` : `${s}`).join(" ")}`
      : "";
  }

  // -- canvas dragging (horizontal by default) -----------------------------
  let dragging: { id: number; lastX: number; lastY: number } | null = null;
  canvas.onpointerdown = (ev) => {
    const rect = canvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / EDITOR_SIDE;
    const y = (ev.clientY - rect.top) / EDITOR_SIDE;
    const state = controller.state;
    for (let i = state.layout.objects.length - 1; i >= 0; i--) {
      const [x0, y0, x1, y1] = state.layout.objects[i].bbox;
      if (x >= x0 && x <= x1 && y >= y0 && y <= y1) {
        dragging = { id: i, lastX: x, lastY: y };
        canvas.setPointerCapture(ev.pointerId);
        controller.update(selectObject(state, i));
        return;
      }
    }
    controller.update(selectObject(state, null));
  };
  canvas.onpointermove = (ev) => {
    if (!dragging) return;
    const rect = canvas.getBoundingClientRect();
    const x = (ev.clientX - rect.left) / EDITOR_SIDE;
    const y = (ev.clientY - rect.top) / EDITOR_SIDE;
    const free = el<HTMLInputElement>("free-drag").checked;
    controller.update(editBox(controller.state, dragging.id,
                              x - dragging.lastX, y - dragging.lastY, free));
    dragging.lastX = x;
    dragging.lastY = y;
  };
  canvas.onpointerup = () => (dragging = null);

  // -- controls -------------------------------------------------------------
  const categorySelect = el<HTMLSelectElement>("category");
  for (const c of vocab?.categories ?? []) {
    const opt = document.createElement("option");
    opt.value = opt.textContent = c;
    categorySelect.appendChild(opt);
  }
  el<HTMLButtonElement>("add").onclick = () => {
    controller.update(addObject(controller.state, categorySelect.value,
                                [0.3, 0.3, 0.7, 0.7]));
  };
  el<HTMLButtonElement>("remove").onclick = () => {
    if (controller.state.selected !== null) {
      controller.update(removeObject(controller.state, controller.state.selected));
    }
  };
  el<HTMLButtonElement>("lock").onclick = () =>
    controller.update(lockSeeds(controller.state));
  el<HTMLButtonElement>("reroll").onclick = () =>
    controller.update(rerollSeeds(controller.state));
  el<HTMLButtonElement>("generate").onclick = () => void controller.regenerate("fresh");
  el<HTMLButtonElement>("regenerate").onclick = () =>
    void controller.regenerate("locked-seeds");
  el<HTMLButtonElement>("pair-btn").onclick = () =>
    void controller.regenerate("shifted-pair");
  el<HTMLButtonElement>("clear-compare").onclick = () =>
    controller.update(clearComparison(controller.state));
  el<HTMLInputElement>("free-drag").onchange = (ev) => {
    el<HTMLDivElement>("drag-warning").style.display =
      (ev.target as HTMLInputElement).checked ? "block" : "none";
  };

  render(controller.state);
}

void boot();
