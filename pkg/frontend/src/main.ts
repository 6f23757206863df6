import { ApiClient } from "./api.js";
import { Controller } from "./controller.js";
import { render } from "./render.js";
import { Store } from "./store.js";

/**
 * Mount the app into `root`. Exported so tests can mount against a mock
 * backend; the DOM entry point below uses it with stored settings.
 */
export function mountApp(root: HTMLElement, api: ApiClient): Controller {
  const store = new Store();
  const controller = new Controller(api, store);
  store.subscribe((state) => render(root, state, controller));
  render(root, store.get(), controller);
  window.addEventListener("focus", () => void controller.checkFreshness());
  void controller.boot();
  return controller;
}

function settingsForm(root: HTMLElement): void {
  root.innerHTML = `
    <section class="settings">
      <h1>Connect to the trainer</h1>
      <label>Service URL <input id="base-url" value="${location.origin}"></label>
      <label>Access token <input id="token" placeholder="pf_…"></label>
      <button id="connect">Connect</button>
    </section>`;
  document.getElementById("connect")!.addEventListener("click", () => {
    const base = (document.getElementById("base-url") as HTMLInputElement).value.trim();
    const token = (document.getElementById("token") as HTMLInputElement).value.trim();
    if (!base || !token) return;
    localStorage.setItem("pf.baseUrl", base);
    localStorage.setItem("pf.token", token);
    mountApp(root, new ApiClient(base, token));
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const root = document.getElementById("app") as HTMLElement;
  const base = localStorage.getItem("pf.baseUrl");
  const token = localStorage.getItem("pf.token");
  if (base && token) {
    mountApp(root, new ApiClient(base, token));
  } else {
    settingsForm(root);
  }
}
