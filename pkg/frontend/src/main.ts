// Browser entry point.  The page is addressed as
// index.html?server=http://host:port&session=s1&role=agent
// and everything else comes over the socket.

import { WozApp } from "./app";
import { Role } from "./protocol";

function boot(): void {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const server = params.get("server") ?? window.location.origin;
  const session = params.get("session");
  const role = (params.get("role") ?? "user") as Role;
  if (!session) {
    root.textContent = "missing ?session= parameter";
    return;
  }
  if (role !== "user" && role !== "agent") {
    root.textContent = `unknown role '${role}'`;
    return;
  }
  const app = new WozApp({ server, session, role, root });
  app.connect().catch((err: Error) => {
    root.textContent = `could not join session: ${err.message}`;
  });
}

boot();
