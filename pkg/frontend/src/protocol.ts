// Wire contract (meep-proto v1). Mirrors PROTOCOL.md; the server re-checks
// everything, the client enforces the same grammar so it can only emit
// valid commits.

export const PROTO = "meep-proto v1";
export const LOG_HEADER = "meep-log v1";

export type Role = "user" | "agent";

export interface TemplateJson {
  id: string;
  pattern: string;
  slot_types: string[][];
  origin: "builtin" | "agent";
}

export interface Hello {
  proto: string;
  session: string;
  role: Role;
  log: string;
  templates: TemplateJson[];
}

export interface Envelope {
  session: string;
  seq: number;
  sender: string;
  kind: string;
  body: Record<string, unknown>;
}

export type WireArg = { span: string } | { field: string } | { query: string };

export type CommitBody =
  | { action: "wait_for_user" }
  | { action: "start_driving"; latitude: string; longitude: string }
  | { action: "call_api"; api: string; args: WireArg[] }
  | { action: "say_template"; template: string; fillers: WireArg[] };

export type ClientFrame =
  | { kind: "user_utterance"; body: { text: string } }
  | { kind: "outcome"; body: { value: string; reason?: string } }
  | { kind: "click"; body: Record<string, unknown> }
  | { kind: "commit_action"; body: CommitBody }
  | { kind: "template_created"; body: { pattern: string; slot_types?: string[][] } }
  | { kind: "ping" };

// One palette slot: a free query built from token clicks, or a parameter
// restricted to the listed field kinds (empty list = any kind).
export type SlotSpec = { query: true } | { query?: false; accepts: string[] };

export interface ApiSpec {
  name: string;
  slots: SlotSpec[];
}

// Canonical field display order; slot type pickers offer exactly these.
export const FIELD_KINDS = [
  "address",
  "name",
  "latitude",
  "longitude",
  "place_id",
  "street_number",
  "street_name",
  "neighborhood",
  "locality",
  "distance",
  "duration",
  "rating",
  "open_now",
] as const;

export const APIS: ApiSpec[] = [
  { name: "find_place", slots: [{ query: true }, { accepts: ["latitude"] }, { accepts: ["longitude"] }] },
  { name: "places_nearby", slots: [{ query: true }, { accepts: ["latitude"] }, { accepts: ["longitude"] }] },
  { name: "distance_matrix", slots: [{ accepts: ["address"] }, { accepts: ["address"] }] },
  { name: "get_place_attributes", slots: [{ accepts: ["place_id"] }] },
];

export function apiSpec(name: string): ApiSpec | undefined {
  return APIS.find((a) => a.name === name);
}

export function isEnvelope(x: unknown): x is Envelope {
  if (typeof x !== "object" || x === null) return false;
  const o = x as Record<string, unknown>;
  return (
    typeof o.session === "string" &&
    typeof o.seq === "number" &&
    typeof o.sender === "string" &&
    typeof o.kind === "string" &&
    typeof o.body === "object" &&
    o.body !== null
  );
}

export function isHello(x: unknown): x is Hello {
  if (typeof x !== "object" || x === null) return false;
  const o = x as Record<string, unknown>;
  return typeof o.proto === "string" && typeof o.log === "string" && Array.isArray(o.templates);
}

export function slotCount(pattern: string): number {
  return pattern.split("{}").length - 1;
}
