// Session state as a pure projection of the wire stream.  A hello frame
// rebuilds everything from the log text; live envelopes apply the same
// per-entry transitions, so reconnecting mid-session lands on identical
// panels.

import {
  ApiCallEntry,
  LogEntry,
  LogMeta,
  parseEntry,
  parseLog,
} from "./logtext";
import { Envelope, Hello, PROTO, Role, TemplateJson } from "./protocol";

export interface FieldView {
  ref: string; // "v1.name"
  kind: string;
  value: string | number;
}

export interface VariableView {
  id: string;
  fields: FieldView[];
}

export interface TokenView {
  id: string; // "u1_5"
  text: string;
}

export interface UtteranceView {
  no: number;
  tokens: TokenView[];
}

export interface ChatItem {
  who: "user" | "agent" | "system";
  text: string;
}

// Kinds whose envelope body is a log entry, verbatim.
const ENTRY_BODY_KINDS = new Set([
  "user_utterance",
  "api_result",
  "agent_utterance",
  "wait",
  "start_driving",
  "outcome",
]);

export class SessionState {
  sessionId = "";
  role: Role = "user";
  meta: LogMeta | null = null;
  banner: string | null = null;
  notice: string | null = null;
  chat: ChatItem[] = [];
  variables: VariableView[] = [];
  utterances: UtteranceView[] = [];
  templates: TemplateJson[] = [];
  driving = false;
  closed = false;
  outcome: string | null = null;
  awaitingOutcome = false;
  lastSeq = 0;

  applyHello(hello: Hello): void {
    if (hello.proto !== PROTO) {
      this.banner = `protocol mismatch: server speaks '${hello.proto}', this client speaks '${PROTO}'`;
      return;
    }
    this.banner = null;
    this.notice = null;
    this.sessionId = hello.session;
    this.role = hello.role;
    this.templates = hello.templates;
    this.chat = [];
    this.variables = [];
    this.utterances = [];
    this.driving = false;
    this.closed = false;
    this.outcome = null;
    this.awaitingOutcome = false;
    this.lastSeq = 0;
    const parsed = parseLog(hello.log);
    this.meta = parsed.meta;
    for (const entry of parsed.entries) this.applyEntry(entry);
    // A reconnect can land between start_driving and the outcome; the user
    // still owes a verdict then.
    if (this.driving && !this.closed) this.awaitingOutcome = true;
  }

  applyEnvelope(env: Envelope): void {
    this.lastSeq = env.seq;
    this.notice = null;
    if (ENTRY_BODY_KINDS.has(env.kind)) {
      const body = { ...env.body };
      delete body.token_ids; // live extra; ids are derivable from position
      this.applyEntry(parseEntry(body, 0));
      return;
    }
    switch (env.kind) {
      case "outcome_request":
        this.awaitingOutcome = true;
        break;
      case "template_created":
        this.templates = [...this.templates, env.body as unknown as TemplateJson];
        break;
      case "error":
        this.notice = String(env.body.message ?? env.body.error ?? "rejected");
        break;
      case "click":
        break; // the mirror is for presence display, not state
      default:
        break; // unknown kinds are forward compatible
    }
  }

  applyEntry(entry: LogEntry): void {
    switch (entry.type) {
      case "init":
        this.variables.push({
          id: "source",
          fields: [
            { ref: "source.address", kind: "address", value: entry.address },
            { ref: "source.latitude", kind: "latitude", value: entry.latitude },
            { ref: "source.longitude", kind: "longitude", value: entry.longitude },
          ],
        });
        break;
      case "user": {
        const no = this.utterances.length + 1;
        this.utterances.push({
          no,
          tokens: entry.tokens.map((text, i) => ({ id: `u${no}_${i}`, text })),
        });
        this.chat.push({ who: "user", text: entry.text });
        break;
      }
      case "api_call":
        this.addCallVariables(entry);
        break;
      case "agent_utterance":
        this.chat.push({ who: "agent", text: entry.text });
        break;
      case "wait":
        break;
      case "start_driving":
        this.driving = true;
        this.chat.push({ who: "system", text: "Driving to the destination." });
        break;
      case "outcome":
        this.closed = true;
        this.outcome = entry.value;
        this.awaitingOutcome = false;
        this.chat.push({
          who: "system",
          text: entry.reason ? `${entry.value} (${entry.reason})` : entry.value,
        });
        break;
    }
  }

  private addCallVariables(entry: ApiCallEntry): void {
    entry.vars.forEach((id, i) => {
      const result = entry.results[i];
      this.variables.push({
        id,
        fields: Object.entries(result).map(([kind, value]) => ({
          ref: `${id}.${kind}`,
          kind,
          value,
        })),
      });
    });
  }

  fieldKind(ref: string): string | null {
    for (const variable of this.variables) {
      for (const field of variable.fields) {
        if (field.ref === ref) return field.kind;
      }
    }
    return null;
  }
}
