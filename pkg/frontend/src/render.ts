// DOM construction for both seats.  Rendering is a full rebuild from
// SessionState plus ClickComposer, so the screen can never drift from the
// wire: the user seat gets the chat pane alone, the agent seat gets chat,
// action palette, variable tree, and token strip, plus the composer bar.

import { ClickComposer, SlotState } from "./composer";
import { FIELD_KINDS } from "./protocol";
import { SessionState } from "./state";

function el(doc: Document, tag: string, className: string, text?: string): HTMLElement {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderChat(doc: Document, state: SessionState): HTMLElement {
  const pane = el(doc, "section", "pane chat");
  pane.appendChild(el(doc, "h2", "", "Conversation"));
  const list = el(doc, "div", "chat-items");
  for (const item of state.chat) {
    list.appendChild(el(doc, "div", `bubble ${item.who}`, item.text));
  }
  pane.appendChild(list);
  return pane;
}

function renderUserControls(doc: Document, state: SessionState): HTMLElement {
  const bar = el(doc, "div", "user-controls");
  if (state.closed) {
    bar.appendChild(el(doc, "div", "closed-note", `Session closed: ${state.outcome}`));
    return bar;
  }
  if (state.awaitingOutcome) {
    const prompt = el(doc, "div", "outcome-prompt");
    prompt.appendChild(el(doc, "span", "", "Is this where you wanted to go?"));
    const yes = el(doc, "button", "approve", "Looks right");
    yes.setAttribute("data-outcome", "approve");
    const no = el(doc, "button", "disapprove", "Not this");
    no.setAttribute("data-outcome", "disapprove");
    prompt.appendChild(yes);
    prompt.appendChild(no);
    bar.appendChild(prompt);
    return bar;
  }
  const input = doc.createElement("input");
  input.type = "text";
  input.placeholder = "Say something";
  input.setAttribute("data-say", "");
  const send = el(doc, "button", "", "Send");
  send.setAttribute("data-send", "");
  bar.appendChild(input);
  bar.appendChild(send);
  return bar;
}

function renderPalette(doc: Document, state: SessionState, composer: ClickComposer): HTMLElement {
  const pane = el(doc, "section", "pane palette");
  pane.appendChild(el(doc, "h2", "", "Actions"));
  const picked =
    composer.pending?.type === "api"
      ? composer.pending.name
      : composer.pending?.type === "template"
        ? composer.pending.template.id
        : composer.pending?.type ?? null;
  for (const name of ["find_place", "places_nearby", "distance_matrix", "get_place_attributes"]) {
    const btn = el(doc, "button", picked === name ? "action picked" : "action", name);
    btn.setAttribute("data-api", name);
    pane.appendChild(btn);
  }
  const wait = el(doc, "button", picked === "wait" ? "action picked" : "action", "wait for user");
  wait.setAttribute("data-wait", "");
  pane.appendChild(wait);
  const drive = el(doc, "button", picked === "drive" ? "action picked" : "action", "start driving");
  drive.setAttribute("data-drive", "");
  pane.appendChild(drive);

  pane.appendChild(el(doc, "h3", "", "Templates"));
  for (const template of state.templates) {
    const btn = el(
      doc,
      "button",
      picked === template.id ? "action template picked" : "action template",
      template.pattern,
    );
    btn.setAttribute("data-template", template.id);
    btn.title = template.id;
    pane.appendChild(btn);
  }
  const plus = el(doc, "button", "action plus", "+");
  plus.setAttribute("data-plus", "");
  pane.appendChild(plus);
  return pane;
}

function renderTemplateCreator(doc: Document, draftPattern: string): HTMLElement {
  const box = el(doc, "div", "template-creator");
  const input = doc.createElement("input");
  input.type = "text";
  input.placeholder = "New template, {} per slot";
  input.value = draftPattern;
  input.setAttribute("data-new-pattern", "");
  box.appendChild(input);
  const slots = draftPattern.split("{}").length - 1;
  for (let i = 0; i < slots; i++) {
    const pick = doc.createElement("select");
    pick.setAttribute("data-slot-kind", String(i));
    for (const kind of ["any", ...FIELD_KINDS]) {
      const opt = doc.createElement("option");
      opt.value = kind;
      opt.textContent = `slot ${i + 1}: ${kind}`;
      pick.appendChild(opt);
    }
    box.appendChild(pick);
  }
  const create = el(doc, "button", "", "Create");
  create.setAttribute("data-create-template", "");
  box.appendChild(create);
  return box;
}

function renderVariables(doc: Document, state: SessionState): HTMLElement {
  const pane = el(doc, "section", "pane variables");
  pane.appendChild(el(doc, "h2", "", "Variables"));
  for (const variable of state.variables) {
    const node = doc.createElement("details");
    node.open = true;
    const summary = doc.createElement("summary");
    summary.textContent = variable.id;
    node.appendChild(summary);
    for (const field of variable.fields) {
      const chip = el(doc, "button", "chip", `${field.kind} = ${field.value}`);
      chip.setAttribute("data-field", field.ref);
      chip.setAttribute("data-kind", field.kind);
      node.appendChild(chip);
    }
    pane.appendChild(node);
  }
  return pane;
}

function renderTokens(doc: Document, state: SessionState): HTMLElement {
  const pane = el(doc, "section", "pane tokens");
  pane.appendChild(el(doc, "h2", "", "User words"));
  for (const utterance of state.utterances) {
    const row = el(doc, "div", "token-row");
    for (const token of utterance.tokens) {
      const btn = el(doc, "button", "token", token.text);
      btn.setAttribute("data-token", token.id);
      row.appendChild(btn);
    }
    pane.appendChild(row);
  }
  return pane;
}

function slotText(slot: SlotState): string {
  if (slot.query) {
    return slot.tokens.length
      ? `query: ${slot.tokens.map((t) => t.text).join(" ")}`
      : "query: click words";
  }
  return slot.field ?? `needs ${slot.label}`;
}

function renderComposer(doc: Document, composer: ClickComposer): HTMLElement {
  const bar = el(doc, "div", "composer");
  if (!composer.pending) {
    bar.appendChild(el(doc, "span", "hint", "Pick an action"));
    return bar;
  }
  const name =
    composer.pending.type === "api"
      ? composer.pending.name
      : composer.pending.type === "template"
        ? composer.pending.template.pattern
        : composer.pending.type === "drive"
          ? "start driving"
          : "wait for user";
  bar.appendChild(el(doc, "span", "pending-name", name));
  composer.slots.forEach((slot, i) => {
    const cls = i === composer.active ? "slot active" : slotFilledClass(slot);
    bar.appendChild(el(doc, "span", cls, slotText(slot)));
  });
  const commit = el(doc, "button", "commit", "Commit");
  commit.setAttribute("data-commit", "");
  if (!composer.complete) commit.setAttribute("disabled", "");
  bar.appendChild(commit);
  const cancel = el(doc, "button", "cancel", "Cancel");
  cancel.setAttribute("data-cancel", "");
  bar.appendChild(cancel);
  if (composer.lastReject) {
    bar.appendChild(el(doc, "span", "reject-flash", "✕"));
  }
  return bar;
}

function slotFilledClass(slot: SlotState): string {
  const filled = slot.query ? slot.tokens.length > 0 : slot.field !== null;
  return filled ? "slot filled" : "slot";
}

export interface RenderExtras {
  creatorOpen: boolean;
  draftPattern: string;
}

export function render(
  root: HTMLElement,
  state: SessionState,
  composer: ClickComposer,
  extras: RenderExtras = { creatorOpen: false, draftPattern: "" },
): void {
  const doc = root.ownerDocument;
  root.replaceChildren();
  if (state.banner) {
    const banner = el(doc, "div", "banner", state.banner);
    root.appendChild(banner);
    return; // a mismatched protocol blocks everything else
  }
  if (state.notice) {
    root.appendChild(el(doc, "div", "notice", state.notice));
  }
  if (state.role === "user") {
    const chat = renderChat(doc, state);
    chat.appendChild(renderUserControls(doc, state));
    root.appendChild(chat);
    return;
  }
  const grid = el(doc, "div", "agent-grid");
  grid.appendChild(renderChat(doc, state));
  const palette = renderPalette(doc, state, composer);
  if (extras.creatorOpen) palette.appendChild(renderTemplateCreator(doc, extras.draftPattern));
  grid.appendChild(palette);
  grid.appendChild(renderVariables(doc, state));
  grid.appendChild(renderTokens(doc, state));
  root.appendChild(grid);
  root.appendChild(renderComposer(doc, composer));
}
