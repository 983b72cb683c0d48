// Application bootstrap: wires the store, the API client, the flows, and
// the renderer into one app object. The e2e tests drive exactly this.

import { ApiClient } from "./api.js";
import {
  cancelRegisterModal,
  instanceActionFlow,
  launchFlow,
  loginFlow,
  openRegisterModal,
  refreshAll,
  registerDatasetFlow,
  taleComposeFlow,
} from "./flows.js";
import { render, type Handlers } from "./render.js";
import { Store } from "./state.js";

export interface App {
  client: ApiClient;
  store: Store;
  handlers: Handlers;
  /** resolves when the in-flight actions kicked off so far have settled */
  idle(): Promise<void>;
}

export function createApp(
  container: HTMLElement,
  apiUrl: string,
  options: { pollIntervalMs?: number; fetchImpl?: typeof fetch } = {},
): App {
  const client = new ApiClient(apiUrl, options.fetchImpl);
  const store = new Store();
  const pending: Promise<void>[] = [];
  const poll = options.pollIntervalMs ?? 2000;

  const track = (work: Promise<void>) => {
    pending.push(work.catch(() => undefined));
  };

  const handlers: Handlers = {
    onLogin: (subject, proof) => track(loginFlow(client, store, subject, proof)),
    onOpenRegister: () => openRegisterModal(store),
    onCancelRegister: () => cancelRegisterModal(store),
    onSubmitRegister: (identifier) =>
      track(registerDatasetFlow(client, store, identifier, poll)),
    onSelectImage: (imageId) =>
      store.update((s) => {
        s.compose.selectedImage = s.compose.selectedImage === imageId ? null : imageId;
      }),
    onSelectFolder: (folderId) =>
      store.update((s) => {
        s.compose.selectedFolder = s.compose.selectedFolder === folderId ? null : folderId;
      }),
    onComposeTitle: (title) =>
      store.update((s) => {
        s.compose.title = title;
      }),
    onCompose: () => track(taleComposeFlow(client, store)),
    onLaunch: (taleId) => track(launchFlow(client, store, taleId)),
    onInstanceAction: (instanceId, action) =>
      track(instanceActionFlow(client, store, instanceId, action)),
  };

  store.subscribe((state) => render(container, state, handlers));
  render(container, store.state, handlers);

  if (client.authenticated) {
    store.update((s) => {
      s.authenticated = true;
    });
    track(refreshAll(client, store));
  }

  return {
    client,
    store,
    handlers,
    async idle() {
      while (pending.length) {
        const batch = pending.splice(0, pending.length);
        await Promise.all(batch);
      }
    },
  };
}

declare global {
  interface Window {
    __TALEKIT_API__?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app-root")) {
  const root = document.getElementById("app-root") as HTMLElement;
  // served from /app on the API host by default
  const apiUrl = window.__TALEKIT_API__ ?? window.location.origin;
  createApp(root, apiUrl);
}
