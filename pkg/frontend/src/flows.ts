// The three user journeys the dashboard drives: register data, compose a
// tale from a frontend image plus a folder, and steer running instances.

import { ApiClient, ApiError } from "./api.js";
import type { Store } from "./state.js";

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  return String(error);
}

export async function refreshAll(client: ApiClient, store: Store): Promise<void> {
  const [folders, images, tales, instances] = await Promise.all([
    client.rootFolders(),
    client.listImages(),
    client.listTales(),
    client.listInstances(),
  ]);
  store.update((s) => {
    s.folders = folders;
    s.images = images;
    s.tales = tales;
    s.instances = instances;
  });
}

export async function loginFlow(
  client: ApiClient,
  store: Store,
  subject: string,
  proof: string,
  issuer = "local",
): Promise<void> {
  try {
    await client.login(issuer, subject, proof);
  } catch (error) {
    store.update((s) => {
      s.loginError = describe(error);
    });
    return;
  }
  store.update((s) => {
    s.authenticated = true;
    s.loginError = null;
  });
  await refreshAll(client, store);
}

/**
 * Register an external dataset: POST the identifier, follow job progress,
 * and refetch the data browser when the job lands so the new folder shows
 * up without a reload.
 */
export async function registerDatasetFlow(
  client: ApiClient,
  store: Store,
  identifier: string,
  pollIntervalMs = 2000,
): Promise<void> {
  let job;
  try {
    job = await client.registerDataset(identifier);
  } catch (error) {
    store.update((s) => {
      s.registerModal.error = describe(error);
    });
    return;
  }
  store.update((s) => {
    s.registerModal.job = job;
    s.registerModal.error = null;
  });
  const final = await client.watchJob(
    job.id,
    (update) =>
      store.update((s) => {
        s.registerModal.job = update;
      }),
    pollIntervalMs,
  );
  if (final.status === "Done") {
    const folders = await client.rootFolders();
    store.update((s) => {
      s.folders = folders;
      s.registerModal.open = false;
      s.registerModal.job = null;
      s.registerModal.identifier = "";
    });
  } else {
    store.update((s) => {
      s.registerModal.error = final.events.length
        ? final.events[final.events.length - 1].message
        : "registration failed";
    });
  }
}

export function openRegisterModal(store: Store): void {
  store.update((s) => {
    s.registerModal = { open: true, identifier: "", job: null, error: null };
  });
}

/** Closing the modal issues no API call; it only clears UI state. */
export function cancelRegisterModal(store: Store): void {
  store.update((s) => {
    s.registerModal = { open: false, identifier: "", job: null, error: null };
  });
}

export async function taleComposeFlow(client: ApiClient, store: Store): Promise<void> {
  const { selectedImage, selectedFolder, title } = store.state.compose;
  if (!selectedImage || !selectedFolder) return; // button should be disabled anyway
  try {
    await client.createTale(selectedImage, selectedFolder, title || "Untitled tale");
  } catch (error) {
    store.update((s) => {
      s.compose.error = describe(error);
    });
    return;
  }
  const tales = await client.listTales();
  store.update((s) => {
    s.tales = tales;
    s.compose = { selectedImage: null, selectedFolder: null, title: "", error: null };
  });
}

async function refreshInstances(client: ApiClient, store: Store): Promise<void> {
  const instances = await client.listInstances();
  store.update((s) => {
    s.instances = instances;
  });
}

export async function launchFlow(client: ApiClient, store: Store, taleId: string): Promise<void> {
  try {
    await client.launchInstance(taleId);
  } catch (error) {
    store.update((s) => {
      s.instanceErrors[taleId] = describe(error);
    });
  }
  await refreshInstances(client, store);
}

export async function instanceActionFlow(
  client: ApiClient,
  store: Store,
  instanceId: string,
  action: "suspend" | "resume" | "delete",
): Promise<void> {
  try {
    if (action === "suspend") await client.suspendInstance(instanceId);
    else if (action === "resume") await client.resumeInstance(instanceId);
    else await client.deleteInstance(instanceId);
  } catch (error) {
    store.update((s) => {
      s.instanceErrors[instanceId] = describe(error);
    });
  }
  await refreshInstances(client, store);
}
