// Client-side view model. It never holds authoritative state: every
// mutation round-trips through the API and the relevant slice is refetched,
// so a stale view heals on the next update.

import type { ImageInfo, InstanceInfo, JobInfo, NodeInfo, TaleInfo } from "./api.js";

export interface RegisterModalState {
  open: boolean;
  identifier: string;
  job: JobInfo | null;
  error: string | null;
}

export interface ComposeState {
  selectedImage: string | null;
  selectedFolder: string | null;
  title: string;
  error: string | null;
}

export interface AppState {
  authenticated: boolean;
  loginError: string | null;
  folders: NodeInfo[];
  images: ImageInfo[];
  tales: TaleInfo[];
  instances: InstanceInfo[];
  registerModal: RegisterModalState;
  compose: ComposeState;
  instanceErrors: Record<string, string>;
}

export function initialState(): AppState {
  return {
    authenticated: false,
    loginError: null,
    folders: [],
    images: [],
    tales: [],
    instances: [],
    registerModal: { open: false, identifier: "", job: null, error: null },
    compose: { selectedImage: null, selectedFolder: null, title: "", error: null },
    instanceErrors: {},
  };
}

export type Listener = (state: AppState) => void;

export class Store {
  state: AppState;
  private listeners: Listener[] = [];

  constructor(state: AppState = initialState()) {
    this.state = state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  update(mutate: (state: AppState) => void): void {
    mutate(this.state);
    for (const listener of this.listeners) listener(this.state);
  }
}

/** Buttons valid for an instance state; mirrors the orchestrator's edges. */
export function validActions(state: InstanceInfo["state"]): string[] {
  switch (state) {
    case "Running":
      return ["open", "suspend", "delete"];
    case "Suspended":
      return ["resume", "delete"];
    case "Error":
      return ["delete"];
    default:
      return [];
  }
}
