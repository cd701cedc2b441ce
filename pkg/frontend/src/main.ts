// Dashboard bootstrap: one panel per configured agent. Agents come from the
// ?agents=url1,url2 query parameter, falling back to consoles.json.

import { AgentPanel } from "./panel.js";

async function agentUrls(): Promise<string[]> {
  const fromQuery = new URLSearchParams(window.location.search).get("agents");
  if (fromQuery) return fromQuery.split(",").map((s) => s.trim()).filter(Boolean);
  const resp = await fetch("./consoles.json");
  if (!resp.ok) throw new Error(`consoles.json: HTTP ${resp.status}`);
  return (await resp.json()) as string[];
}

async function boot(): Promise<void> {
  const root = document.getElementById("consoles");
  if (!root) throw new Error("missing #consoles element");
  for (const url of await agentUrls()) {
    const panel = new AgentPanel(document, url);
    root.appendChild(panel.element);
    void panel.start();
  }
}

void boot().catch((err) => {
  const root = document.getElementById("consoles");
  if (root) root.textContent = `console failed to start: ${String(err)}`;
});
