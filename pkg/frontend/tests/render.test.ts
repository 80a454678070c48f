import { describe, expect, it } from "vitest";
import { ClickComposer } from "../src/composer";
import { render } from "../src/render";
import { SessionState } from "../src/state";
import { envelopesAfter, headerOnly, hello, walkthrough } from "./helpers";

function mount(): HTMLElement {
  const root = document.createElement("div");
  document.body.appendChild(root);
  return root;
}

function draw(state: SessionState, composer = new ClickComposer()): HTMLElement {
  const root = mount();
  render(root, state, composer);
  return root;
}

describe("render", () => {
  it("gives a fresh session an empty transcript and the source variable only", () => {
    const state = new SessionState();
    state.applyHello(hello(headerOnly()));
    const root = draw(state);
    expect(root.querySelectorAll(".bubble").length).toBe(0);
    expect(root.querySelectorAll("details").length).toBe(1);
    expect(root.querySelector("details summary")?.textContent).toBe("source");
    expect(root.querySelectorAll(".token").length).toBe(0);
  });

  it("shows the user seat a chat pane and nothing else", () => {
    const state = new SessionState();
    state.applyHello(hello(walkthrough, "user"));
    const root = draw(state);
    expect(root.querySelectorAll(".pane.chat").length).toBe(1);
    expect(root.querySelectorAll(".pane").length).toBe(1);
    expect(root.querySelector("[data-token]")).toBeNull();
    expect(root.querySelector("[data-field]")).toBeNull();
  });

  it("grows the variable tree with one chip per result field", () => {
    const state = new SessionState();
    state.applyHello(hello(walkthrough));
    const root = draw(state);
    const vars = Array.from(root.querySelectorAll("details summary")).map((s) => s.textContent);
    expect(vars).toEqual(["source", "v1"]);
    const v1 = root.querySelectorAll("details")[1];
    // eight descriptive fields plus distance and duration, which the
    // reply template fills from
    expect(v1.querySelectorAll("[data-field]").length).toBe(10);
    expect(v1.querySelector('[data-field="v1.duration"]')?.getAttribute("data-kind")).toBe(
      "duration",
    );
  });

  it("keeps the commit button disabled until the construction is complete", () => {
    const state = new SessionState();
    state.applyHello(hello(walkthrough));
    const composer = new ClickComposer();
    composer.selectAction({ type: "api", name: "find_place" });
    let root = mount();
    render(root, state, composer);
    expect(root.querySelector("[data-commit]")?.hasAttribute("disabled")).toBe(true);

    composer.clickToken("u1_5", "Starbucks");
    composer.clickField("source.latitude", "latitude");
    composer.clickField("source.longitude", "longitude");
    root = mount();
    render(root, state, composer);
    expect(root.querySelector("[data-commit]")?.hasAttribute("disabled")).toBe(false);
  });

  it("labels each slot with what filled it", () => {
    const state = new SessionState();
    state.applyHello(hello(walkthrough));
    const composer = new ClickComposer();
    composer.selectAction({ type: "api", name: "find_place" });
    composer.clickToken("u1_5", "Starbucks");
    composer.clickToken("u1_7", "Venice");
    const root = mount();
    render(root, state, composer);
    const slots = Array.from(root.querySelectorAll(".composer .slot")).map((s) => s.textContent);
    expect(slots[0]).toBe("query: Starbucks Venice");
    expect(slots[1]).toBe("needs latitude");
    expect(root.querySelector(".slot.active")?.textContent).toBe("query: Starbucks Venice");
  });

  it("moves the highlight as slots fill", () => {
    const state = new SessionState();
    state.applyHello(hello(walkthrough));
    const composer = new ClickComposer();
    composer.selectAction({ type: "api", name: "find_place" });
    composer.clickToken("u1_5", "Starbucks");
    composer.clickField("source.latitude", "latitude");
    const root = mount();
    render(root, state, composer);
    expect(root.querySelector(".slot.active")?.textContent).toBe("needs longitude");
    const filled = Array.from(root.querySelectorAll(".slot.filled")).map((s) => s.textContent);
    expect(filled).toEqual(["query: Starbucks", "source.latitude"]);
  });

  it("blocks everything behind the banner on a protocol mismatch", () => {
    const state = new SessionState();
    state.applyHello({ ...hello(walkthrough), proto: "meep-proto v9" });
    const root = draw(state);
    expect(root.querySelector(".banner")).not.toBeNull();
    expect(root.querySelectorAll(".pane").length).toBe(0);
    expect(root.querySelector("[data-commit]")).toBeNull();
  });

  it("renders identical panels from a live stream and from a refresh", () => {
    const lines = walkthrough.trimEnd().split("\n");
    const totalEntries = lines.length - 2;
    for (let prefix = 1; prefix <= totalEntries; prefix++) {
      const rebuilt = new SessionState();
      rebuilt.applyHello(hello(lines.slice(0, 2 + prefix).join("\n") + "\n"));

      const live = new SessionState();
      live.applyHello(hello(lines.slice(0, 3).join("\n") + "\n"));
      for (const env of envelopesAfter(1).slice(0, prefix - 1)) live.applyEnvelope(env);

      const a = draw(live);
      const b = draw(rebuilt);
      expect(a.innerHTML).toBe(b.innerHTML);
    }
  });
});
