// DOM rendering: plain elements rebuilt from the store on every update.
// Action buttons are created only for transitions the orchestrator allows,
// so an invalid action simply has no element to click.

import type { ImageInfo, InstanceInfo, TaleInfo } from "./api.js";
import type { AppState } from "./state.js";
import { validActions } from "./state.js";

export interface Handlers {
  onLogin(subject: string, proof: string): void;
  onOpenRegister(): void;
  onCancelRegister(): void;
  onSubmitRegister(identifier: string): void;
  onSelectImage(imageId: string): void;
  onSelectFolder(folderId: string): void;
  onComposeTitle(title: string): void;
  onCompose(): void;
  onLaunch(taleId: string): void;
  onInstanceAction(instanceId: string, action: "suspend" | "resume" | "delete"): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) node.setAttribute(key, value);
  if (text) node.textContent = text;
  return node;
}

function section(title: string, testId: string): HTMLElement {
  const box = el("section", { "data-testid": testId });
  box.appendChild(el("h2", {}, title));
  return box;
}

function renderLogin(state: AppState, handlers: Handlers): HTMLElement {
  const box = section("Sign in", "login-view");
  const subject = el("input", { "data-testid": "login-subject", placeholder: "subject" });
  const proof = el("input", {
    "data-testid": "login-proof",
    placeholder: "proof",
    type: "password",
  });
  const button = el("button", { "data-testid": "login-submit" }, "Sign in");
  button.addEventListener("click", () => handlers.onLogin(subject.value, proof.value));
  box.append(subject, proof, button);
  if (state.loginError) {
    box.appendChild(el("p", { class: "error", "data-testid": "login-error" }, state.loginError));
  }
  return box;
}

function renderBrowser(state: AppState, handlers: Handlers): HTMLElement {
  const box = section("Data", "data-browser");
  const registerButton = el("button", { "data-testid": "open-register" }, "Register dataset…");
  registerButton.addEventListener("click", handlers.onOpenRegister);
  box.appendChild(registerButton);
  const list = el("ul", { "data-testid": "folder-list" });
  for (const folder of state.folders) {
    const item = el("li", { "data-testid": `folder-${folder.id}`, "data-name": folder.name });
    const pick = el("button", { "data-testid": `pick-folder-${folder.id}` }, folder.name);
    if (state.compose.selectedFolder === folder.id) pick.setAttribute("data-selected", "true");
    pick.addEventListener("click", () => handlers.onSelectFolder(folder.id));
    item.appendChild(pick);
    list.appendChild(item);
  }
  box.appendChild(list);
  return box;
}

function renderRegisterModal(state: AppState, handlers: Handlers): HTMLElement | null {
  if (!state.registerModal.open) return null;
  const modal = el("div", { class: "modal", "data-testid": "register-modal" });
  modal.appendChild(el("h3", {}, "Register external dataset"));
  const input = el("input", {
    "data-testid": "register-identifier",
    placeholder: "doi:, mock:, https:, file: identifier",
  });
  input.value = state.registerModal.identifier;
  const submit = el("button", { "data-testid": "register-submit" }, "Register");
  submit.addEventListener("click", () => handlers.onSubmitRegister(input.value));
  const cancel = el("button", { "data-testid": "register-cancel" }, "Cancel");
  cancel.addEventListener("click", handlers.onCancelRegister);
  modal.append(input, submit, cancel);
  const job = state.registerModal.job;
  if (job) {
    const bar = el("progress", {
      "data-testid": "register-progress",
      max: "100",
      value: String(job.progress),
    });
    modal.appendChild(bar);
    const log = el("ul", { "data-testid": "register-events" });
    for (const event of job.events) log.appendChild(el("li", {}, event.message));
    modal.appendChild(log);
  }
  if (state.registerModal.error) {
    modal.appendChild(
      el("p", { class: "error", "data-testid": "register-error" }, state.registerModal.error),
    );
  }
  return modal;
}

function imageLabel(image: ImageInfo): string {
  return `${image.id.slice(0, 8)} [${image.status}]`;
}

function renderCompose(state: AppState, handlers: Handlers): HTMLElement {
  const box = section("Compose a tale", "compose-panel");
  const images = el("ul", { "data-testid": "image-list" });
  for (const image of state.images) {
    const item = el("li", {});
    const pick = el("button", { "data-testid": `pick-image-${image.id}` }, imageLabel(image));
    if (state.compose.selectedImage === image.id) pick.setAttribute("data-selected", "true");
    pick.addEventListener("click", () => handlers.onSelectImage(image.id));
    item.appendChild(pick);
    images.appendChild(item);
  }
  box.appendChild(images);

  const title = el("input", { "data-testid": "compose-title", placeholder: "tale title" });
  title.value = state.compose.title;
  title.addEventListener("input", () => handlers.onComposeTitle(title.value));
  box.appendChild(title);

  const selected = state.images.find((i) => i.id === state.compose.selectedImage);
  const ready = selected !== undefined && selected.status === "Ready";
  const button = el("button", { "data-testid": "compose-submit" }, "Create tale");
  if (!state.compose.selectedFolder || !selected || !ready) {
    button.setAttribute("disabled", "true");
    if (selected && !ready) {
      button.setAttribute("title", `image is ${selected.status}; wait for Ready`);
    } else if (!state.compose.selectedFolder) {
      button.setAttribute("title", "select a data folder first");
    } else {
      button.setAttribute("title", "select a frontend image first");
    }
  }
  button.addEventListener("click", handlers.onCompose);
  box.appendChild(button);
  if (state.compose.error) {
    box.appendChild(el("p", { class: "error", "data-testid": "compose-error" }, state.compose.error));
  }
  return box;
}

function renderTales(state: AppState, handlers: Handlers): HTMLElement {
  const box = section("Tales", "tale-list");
  for (const tale of state.tales) {
    box.appendChild(renderTaleCard(tale, state, handlers));
  }
  return box;
}

function renderTaleCard(tale: TaleInfo, state: AppState, handlers: Handlers): HTMLElement {
  const card = el("div", { class: "card", "data-testid": `tale-${tale.id}` });
  card.appendChild(el("h3", {}, tale.metadata.title || "(untitled)"));
  const image = state.images.find((i) => i.id === tale.image_id);
  const launch = el("button", { "data-testid": `launch-${tale.id}` }, "Launch");
  if (!image || image.status !== "Ready") {
    launch.setAttribute("disabled", "true");
    launch.setAttribute("title", `image is ${image ? image.status : "unknown"}; launch needs Ready`);
  }
  launch.addEventListener("click", () => handlers.onLaunch(tale.id));
  card.appendChild(launch);
  const error = state.instanceErrors[tale.id];
  if (error) card.appendChild(el("p", { class: "error" }, error));
  return card;
}

export function renderInstanceCard(instance: InstanceInfo, handlers: Handlers): HTMLElement {
  const card = el("div", { class: "card", "data-testid": `instance-${instance.id}` });
  card.appendChild(el("h3", {}, `${instance.id.slice(0, 8)} — ${instance.state}`));

  const steps = el("ol", { "data-testid": `steps-${instance.id}` });
  for (const step of instance.audit) {
    const line = el(
      "li",
      { "data-outcome": step.outcome },
      `${step.index}. ${step.name}: ${step.outcome}`,
    );
    steps.appendChild(line);
  }
  card.appendChild(steps);
  const failed = instance.audit.find((s) => s.outcome === "failed");
  if (failed) {
    card.appendChild(
      el(
        "p",
        { class: "error", "data-testid": `rollback-${instance.id}` },
        `step ${failed.index} failed; earlier steps were rolled back`,
      ),
    );
  }

  for (const action of validActions(instance.state)) {
    if (action === "open") {
      // plain link to the proxy route; carries no credentials
      card.appendChild(
        el("a", { href: instance.route_path, "data-testid": `open-${instance.id}` }, "open"),
      );
    } else {
      const button = el("button", { "data-testid": `${action}-${instance.id}` }, action);
      button.addEventListener("click", () =>
        handlers.onInstanceAction(instance.id, action as "suspend" | "resume" | "delete"),
      );
      card.appendChild(button);
    }
  }
  return card;
}

function renderInstances(state: AppState, handlers: Handlers): HTMLElement {
  const box = section("Instances", "instance-list");
  for (const instance of state.instances) {
    box.appendChild(renderInstanceCard(instance, handlers));
  }
  return box;
}

export function render(container: HTMLElement, state: AppState, handlers: Handlers): void {
  container.replaceChildren();
  if (!state.authenticated) {
    container.appendChild(renderLogin(state, handlers));
    return;
  }
  container.appendChild(renderBrowser(state, handlers));
  const modal = renderRegisterModal(state, handlers);
  if (modal) container.appendChild(modal);
  container.appendChild(renderCompose(state, handlers));
  container.appendChild(renderTales(state, handlers));
  container.appendChild(renderInstances(state, handlers));
}
