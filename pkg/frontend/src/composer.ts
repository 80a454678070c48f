// Modal action construction.  Picking an action opens its slots; clicks
// fill them strictly in order; commit stays disabled until every slot is
// filled with something type-valid, so an invalid action can never be
// sent.  Escape abandons the whole construction.

import { CommitBody, SlotSpec, TemplateJson, WireArg, apiSpec, slotCount } from "./protocol";

export type PendingAction =
  | { type: "api"; name: string }
  | { type: "template"; template: TemplateJson }
  | { type: "wait" }
  | { type: "drive" };

export interface SlotState {
  label: string;
  query: boolean;
  accepts: string[]; // param slots; empty means any field kind
  tokens: { id: string; text: string }[];
  field: string | null;
}

function slotFromSpec(spec: SlotSpec): SlotState {
  if ("query" in spec && spec.query) {
    return { label: "query", query: true, accepts: [], tokens: [], field: null };
  }
  const accepts = (spec as { accepts: string[] }).accepts;
  return {
    label: accepts.length ? accepts.join("/") : "any",
    query: false,
    accepts,
    tokens: [],
    field: null,
  };
}

function slotFilled(slot: SlotState): boolean {
  return slot.query ? slot.tokens.length > 0 : slot.field !== null;
}

export class ClickComposer {
  pending: PendingAction | null = null;
  slots: SlotState[] = [];
  active = 0;
  // last click that bounced off the grammar, for a visual shake and nothing else
  lastReject: string | null = null;

  selectAction(action: PendingAction): void {
    this.pending = action;
    this.lastReject = null;
    this.active = 0;
    switch (action.type) {
      case "api":
        this.slots = (apiSpec(action.name)?.slots ?? []).map(slotFromSpec);
        break;
      case "template":
        this.slots = action.template.slot_types.map((kinds) => slotFromSpec({ accepts: kinds }));
        break;
      case "drive":
        this.slots = [
          slotFromSpec({ accepts: ["latitude"] }),
          slotFromSpec({ accepts: ["longitude"] }),
        ];
        break;
      case "wait":
        this.slots = [];
        break;
    }
  }

  cancel(): void {
    this.pending = null;
    this.slots = [];
    this.active = 0;
    this.lastReject = null;
  }

  clickToken(id: string, text: string): boolean {
    const slot = this.slots[this.active];
    if (!this.pending || !slot || !slot.query) {
      this.lastReject = id;
      return false;
    }
    slot.tokens.push({ id, text });
    this.lastReject = null;
    return true;
  }

  clickField(ref: string, kind: string): boolean {
    if (!this.pending) {
      this.lastReject = ref;
      return false;
    }
    const slot = this.slots[this.active];
    if (slot && slot.query) {
      // a field chip can't fill a query; it closes the query by filling the
      // next slot, valid only once the query has at least one token
      const next = this.slots[this.active + 1];
      if (slot.tokens.length > 0 && next && !next.query && accepts(next, kind)) {
        next.field = ref;
        this.active += 2;
        this.lastReject = null;
        return true;
      }
      this.lastReject = ref;
      return false;
    }
    if (slot && accepts(slot, kind)) {
      slot.field = ref;
      this.active += 1;
      this.lastReject = null;
      return true;
    }
    this.lastReject = ref;
    return false;
  }

  get complete(): boolean {
    return this.pending !== null && this.slots.every(slotFilled);
  }

  commitBody(): CommitBody | null {
    if (!this.complete || !this.pending) return null;
    const args: WireArg[] = this.slots.map((slot) =>
      slot.query
        ? { span: slot.tokens.map((t) => t.id).join("+") }
        : { field: slot.field as string },
    );
    switch (this.pending.type) {
      case "wait":
        return { action: "wait_for_user" };
      case "drive":
        return {
          action: "start_driving",
          latitude: this.slots[0].field as string,
          longitude: this.slots[1].field as string,
        };
      case "api":
        return { action: "call_api", api: this.pending.name, args };
      case "template":
        return {
          action: "say_template",
          template: this.pending.template.id,
          fillers: args,
        };
    }
  }
}

function accepts(slot: SlotState, kind: string): boolean {
  return slot.accepts.length === 0 || slot.accepts.includes(kind);
}

export function templateSlotCount(pattern: string): number {
  return slotCount(pattern);
}
