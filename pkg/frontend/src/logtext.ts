// Parser for the session log text carried in the hello frame.  The server
// is the authority on log validity; this only needs enough structure to
// rebuild panels, so it checks shapes and line framing, not reference
// closure.

import { LOG_HEADER, WireArg } from "./protocol";

export interface LogMeta {
  session_id: string;
  timestamp: string;
  backend_id: string;
  dataset_version: string;
}

export type FieldValue = string | number;

export interface InitEntry {
  type: "init";
  address: string;
  latitude: number;
  longitude: number;
}

export interface UserEntry {
  type: "user";
  text: string;
  tokens: string[];
}

export interface ApiCallEntry {
  type: "api_call";
  api: string;
  args: WireArg[];
  vars: string[];
  results: Record<string, FieldValue>[];
  error?: string;
}

export interface AgentUtteranceEntry {
  type: "agent_utterance";
  template: string;
  pattern: string;
  fillers: WireArg[];
  text: string;
}

export interface WaitEntry {
  type: "wait";
}

export interface StartDrivingEntry {
  type: "start_driving";
  latitude_ref: string;
  longitude_ref: string;
  latitude: number;
  longitude: number;
}

export interface OutcomeEntry {
  type: "outcome";
  value: string;
  reason?: string;
}

export type LogEntry =
  | InitEntry
  | UserEntry
  | ApiCallEntry
  | AgentUtteranceEntry
  | WaitEntry
  | StartDrivingEntry
  | OutcomeEntry;

export interface ParsedLog {
  meta: LogMeta;
  entries: LogEntry[];
}

export class LogParseError extends Error {
  constructor(message: string, readonly line: number) {
    super(`line ${line}: ${message}`);
  }
}

function asString(obj: Record<string, unknown>, key: string, line: number): string {
  const v = obj[key];
  if (typeof v !== "string") throw new LogParseError(`'${key}' must be a string`, line);
  return v;
}

function asNumber(obj: Record<string, unknown>, key: string, line: number): number {
  const v = obj[key];
  if (typeof v !== "number") throw new LogParseError(`'${key}' must be a number`, line);
  return v;
}

function asArg(raw: unknown, line: number): WireArg {
  if (typeof raw !== "object" || raw === null) {
    throw new LogParseError("argument must be an object", line);
  }
  const keys = Object.keys(raw);
  if (keys.length !== 1 || !["span", "field", "query"].includes(keys[0])) {
    throw new LogParseError("argument must have exactly one of span/field/query", line);
  }
  const value = (raw as Record<string, unknown>)[keys[0]];
  if (typeof value !== "string") throw new LogParseError("argument value must be a string", line);
  return raw as WireArg;
}

function asArgs(obj: Record<string, unknown>, key: string, line: number): WireArg[] {
  const raw = obj[key];
  if (!Array.isArray(raw)) throw new LogParseError(`'${key}' must be a list`, line);
  return raw.map((a) => asArg(a, line));
}

export function parseEntry(obj: unknown, line: number): LogEntry {
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new LogParseError("entry must be an object", line);
  }
  const o = obj as Record<string, unknown>;
  switch (o.type) {
    case "init":
      return {
        type: "init",
        address: asString(o, "address", line),
        latitude: asNumber(o, "latitude", line),
        longitude: asNumber(o, "longitude", line),
      };
    case "user": {
      const tokens = o.tokens;
      if (!Array.isArray(tokens) || !tokens.every((t) => typeof t === "string")) {
        throw new LogParseError("'tokens' must be a list of strings", line);
      }
      return { type: "user", text: asString(o, "text", line), tokens: tokens as string[] };
    }
    case "api_call": {
      const rawVars = o.vars;
      const rawResults = o.results;
      if (!Array.isArray(rawVars) || !rawVars.every((v) => typeof v === "string")) {
        throw new LogParseError("'vars' must be a list of strings", line);
      }
      if (!Array.isArray(rawResults) || !rawResults.every((r) => typeof r === "object" && r !== null)) {
        throw new LogParseError("'results' must be a list of objects", line);
      }
      const entry: ApiCallEntry = {
        type: "api_call",
        api: asString(o, "api", line),
        args: asArgs(o, "args", line),
        vars: rawVars as string[],
        results: rawResults as Record<string, FieldValue>[],
      };
      if ("error" in o) entry.error = asString(o, "error", line);
      return entry;
    }
    case "agent_utterance":
      return {
        type: "agent_utterance",
        template: asString(o, "template", line),
        pattern: asString(o, "pattern", line),
        fillers: asArgs(o, "fillers", line),
        text: asString(o, "text", line),
      };
    case "wait":
      return { type: "wait" };
    case "start_driving":
      return {
        type: "start_driving",
        latitude_ref: asString(o, "latitude_ref", line),
        longitude_ref: asString(o, "longitude_ref", line),
        latitude: asNumber(o, "latitude", line),
        longitude: asNumber(o, "longitude", line),
      };
    case "outcome": {
      const entry: OutcomeEntry = { type: "outcome", value: asString(o, "value", line) };
      if ("reason" in o) entry.reason = asString(o, "reason", line);
      return entry;
    }
    default:
      throw new LogParseError(`unknown entry type ${JSON.stringify(o.type)}`, line);
  }
}

export function parseLog(text: string): ParsedLog {
  if (!text.endsWith("\n")) throw new LogParseError("log must end with a newline", 1);
  const lines = text.slice(0, -1).split("\n");
  if (lines[0] !== LOG_HEADER) {
    throw new LogParseError(`log must start with '${LOG_HEADER}'`, 1);
  }
  if (lines.length < 2) throw new LogParseError("missing metadata line", 2);
  let rawMeta: unknown;
  try {
    rawMeta = JSON.parse(lines[1]);
  } catch {
    throw new LogParseError("metadata is not valid JSON", 2);
  }
  const m = rawMeta as Record<string, unknown>;
  const meta: LogMeta = {
    session_id: asString(m, "session_id", 2),
    timestamp: asString(m, "timestamp", 2),
    backend_id: asString(m, "backend_id", 2),
    dataset_version: asString(m, "dataset_version", 2),
  };
  const entries: LogEntry[] = [];
  for (let i = 2; i < lines.length; i++) {
    let obj: unknown;
    try {
      obj = JSON.parse(lines[i]);
    } catch {
      throw new LogParseError("entry is not valid JSON", i + 1);
    }
    entries.push(parseEntry(obj, i + 1));
  }
  return { meta, entries };
}
