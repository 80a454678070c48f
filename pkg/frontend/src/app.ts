// One app instance is one seat at one session: a socket, the projected
// state, the click composer, and a delegated DOM handler over the rendered
// panels.  The socket constructor is injected so tests can run against a
// real server from node.

import { ClickComposer, PendingAction } from "./composer";
import { ClientFrame, Role, isEnvelope, isHello, slotCount } from "./protocol";
import { render } from "./render";
import { SessionState } from "./state";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  addEventListener(type: string, listener: (event: never) => void): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface AppOptions {
  server: string; // http origin of the session host
  session: string;
  role: Role;
  root: HTMLElement;
  makeSocket?: SocketFactory;
}

function wsUrl(server: string, session: string, role: Role): string {
  const origin = server.replace(/^http/, "ws").replace(/\/$/, "");
  return `${origin}/ws/${session}?role=${role}`;
}

export class WozApp {
  readonly state = new SessionState();
  readonly composer = new ClickComposer();
  creatorOpen = false;
  draftPattern = "";
  private socket: SocketLike | null = null;

  constructor(private readonly options: AppOptions) {
    this.wireDom();
  }

  connect(): Promise<void> {
    const factory: SocketFactory =
      this.options.makeSocket ?? ((url) => new WebSocket(url) as unknown as SocketLike);
    const socket = factory(wsUrl(this.options.server, this.options.session, this.options.role));
    this.socket = socket;
    return new Promise((resolve, reject) => {
      let greeted = false;
      socket.addEventListener("message", (event: MessageEvent) => {
        this.onMessage(String(event.data));
        if (!greeted) {
          greeted = true;
          resolve();
        }
      });
      socket.addEventListener("close", () => {
        if (!greeted) reject(new Error("socket closed before hello"));
        if (!this.state.closed && !this.state.banner) {
          this.state.notice = "connection lost";
          this.rerender();
        }
      });
      socket.addEventListener("error", () => {
        if (!greeted) reject(new Error("socket failed"));
      });
    });
  }

  close(): void {
    this.socket?.close();
  }

  private send(frame: ClientFrame): void {
    this.socket?.send(JSON.stringify(frame));
  }

  private mirror(panel: string, item: string): void {
    this.send({ kind: "click", body: { panel, item } });
  }

  private onMessage(text: string): void {
    let data: unknown;
    try {
      data = JSON.parse(text);
    } catch {
      return;
    }
    if (isHello(data)) {
      this.state.applyHello(data);
    } else if (isEnvelope(data)) {
      this.state.applyEnvelope(data);
    } else {
      return; // pong and anything newer
    }
    this.rerender();
  }

  rerender(): void {
    render(this.options.root, this.state, this.composer, {
      creatorOpen: this.creatorOpen,
      draftPattern: this.draftPattern,
    });
  }

  // -- user seat actions ----------------------------------------------------

  sayUtterance(text: string): void {
    if (text.trim()) this.send({ kind: "user_utterance", body: { text } });
  }

  sendOutcome(value: string): void {
    this.send({ kind: "outcome", body: { value } });
  }

  // -- agent seat actions ---------------------------------------------------

  pickAction(action: PendingAction, item: string): void {
    this.composer.selectAction(action);
    this.mirror("palette", item);
    this.rerender();
  }

  commit(): void {
    const body = this.composer.commitBody();
    if (!body) return;
    this.send({ kind: "commit_action", body });
    this.composer.cancel();
    this.rerender();
  }

  createTemplate(pattern: string, kinds: string[]): void {
    if (slotCount(pattern) !== kinds.length) return;
    const frame: ClientFrame = { kind: "template_created", body: { pattern } };
    if (kinds.some((k) => k !== "any")) {
      frame.body.slot_types = kinds.map((k) => (k === "any" ? [] : [k]));
    }
    this.send(frame);
    this.creatorOpen = false;
    this.draftPattern = "";
    this.rerender();
  }

  // -- DOM wiring -----------------------------------------------------------

  private wireDom(): void {
    const root = this.options.root;
    root.addEventListener("click", (event) => {
      const target = (event.target as Element | null)?.closest("[data-token],[data-field],[data-api],[data-template],[data-wait],[data-drive],[data-commit],[data-cancel],[data-plus],[data-create-template],[data-send],[data-outcome]");
      if (!(target instanceof Element)) return;
      this.onActivate(target as HTMLElement);
    });
    root.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key !== "Escape") return;
      this.composer.cancel();
      this.creatorOpen = false;
      this.rerender();
    });
    root.addEventListener("input", (event) => {
      const target = event.target as HTMLElement;
      if (!target.hasAttribute("data-new-pattern")) return;
      const value = (target as HTMLInputElement).value;
      const before = slotCount(this.draftPattern);
      this.draftPattern = value;
      // rebuilding on every keystroke would drop focus; only the slot
      // pickers depend on the pattern, so rebuild when their count changes
      if (slotCount(value) !== before) this.rerender();
    });
  }

  private onActivate(target: HTMLElement): void {
    const root = this.options.root;
    if (target.hasAttribute("data-token")) {
      const id = target.getAttribute("data-token") as string;
      if (this.composer.clickToken(id, target.textContent ?? "")) this.mirror("tokens", id);
      this.rerender();
    } else if (target.hasAttribute("data-field")) {
      const ref = target.getAttribute("data-field") as string;
      const kind = target.getAttribute("data-kind") ?? "";
      if (this.composer.clickField(ref, kind)) this.mirror("variables", ref);
      this.rerender();
    } else if (target.hasAttribute("data-api")) {
      const name = target.getAttribute("data-api") as string;
      this.pickAction({ type: "api", name }, name);
    } else if (target.hasAttribute("data-template")) {
      const id = target.getAttribute("data-template") as string;
      const template = this.state.templates.find((t) => t.id === id);
      if (template) this.pickAction({ type: "template", template }, id);
    } else if (target.hasAttribute("data-wait")) {
      this.pickAction({ type: "wait" }, "wait_for_user");
    } else if (target.hasAttribute("data-drive")) {
      this.pickAction({ type: "drive" }, "start_driving");
    } else if (target.hasAttribute("data-commit")) {
      this.commit();
    } else if (target.hasAttribute("data-cancel")) {
      this.composer.cancel();
      this.rerender();
    } else if (target.hasAttribute("data-plus")) {
      this.creatorOpen = true;
      this.rerender();
    } else if (target.hasAttribute("data-create-template")) {
      const input = root.querySelector("[data-new-pattern]") as HTMLInputElement | null;
      const pattern = input?.value ?? this.draftPattern;
      const kinds: string[] = [];
      root.querySelectorAll("[data-slot-kind]").forEach((pick) => {
        kinds.push((pick as HTMLSelectElement).value);
      });
      this.createTemplate(pattern, kinds);
    } else if (target.hasAttribute("data-send")) {
      const input = root.querySelector("[data-say]") as HTMLInputElement | null;
      if (input) {
        this.sayUtterance(input.value);
        input.value = "";
      }
    } else if (target.hasAttribute("data-outcome")) {
      this.sendOutcome(target.getAttribute("data-outcome") as string);
    }
  }
}
