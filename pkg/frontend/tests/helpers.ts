// Shared walkthrough fixtures: the frozen log plus the envelope stream the
// host would have broadcast for it.

import { readFileSync } from "node:fs";
import { Envelope, Hello, PROTO, TemplateJson } from "../src/protocol";

export const walkthrough = readFileSync("tests/fixtures/walkthrough.log", "utf8");

export const TEMPLATES: TemplateJson[] = [
  { id: "t3", pattern: "{} on {} is {} minutes away.", slot_types: [[], [], []], origin: "builtin" },
  { id: "t4", pattern: "Shall we go?", slot_types: [], origin: "builtin" },
];

export function hello(log: string, role: "user" | "agent" = "agent"): Hello {
  return { proto: PROTO, session: "walk", role, log, templates: TEMPLATES };
}

export function headerOnly(): string {
  return walkthrough.split("\n").slice(0, 3).join("\n") + "\n";
}

const ENTRY_KINDS: Record<string, string> = {
  user: "user_utterance",
  api_call: "api_result",
  agent_utterance: "agent_utterance",
  wait: "wait",
  start_driving: "start_driving",
  outcome: "outcome",
};

export function envelopesAfter(prefixEntries: number): Envelope[] {
  const lines = walkthrough.trimEnd().split("\n").slice(2);
  let seq = 0;
  let utteranceNo = lines
    .slice(0, prefixEntries)
    .filter((l) => JSON.parse(l).type === "user").length;
  return lines.slice(prefixEntries).map((line) => {
    const body = JSON.parse(line);
    if (body.type === "user") {
      utteranceNo += 1;
      body.token_ids = body.tokens.map((_: string, i: number) => `u${utteranceNo}_${i}`);
    }
    seq += 1;
    return {
      session: "walk",
      seq,
      sender: body.type === "user" || body.type === "outcome" ? "user" : "agent",
      kind: ENTRY_KINDS[body.type],
      body,
    };
  });
}
