// REST client for the talekit service. The bearer token lives in memory
// plus sessionStorage; it is sent only as an Authorization header, never
// in URLs, so it cannot leak into links, history, or the rendered DOM.

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(code: string, message: string, status: number) {
    super(message);
    this.code = code;
    this.status = status;
  }
}

export interface NodeInfo {
  id: string;
  kind: "Collection" | "Folder" | "Item";
  name: string;
  parent: string | null;
}

export interface JobInfo {
  id: string;
  kind: string;
  status: "Queued" | "Running" | "Done" | "Failed";
  progress: number;
  events: { message: string; progress: number }[];
  result: Record<string, string>;
}

export interface RecipeInfo {
  id: string;
  name: string;
  repo_url: string;
  commit_id: string;
}

export interface ImageInfo {
  id: string;
  recipe_id: string;
  status: "Queued" | "Building" | "Ready" | "Failed";
  digest: string | null;
}

export interface TaleInfo {
  id: string;
  image_id: string;
  folder_id: string;
  metadata: { title: string; authors: string[]; publication_status: string };
  degraded: boolean;
}

export interface AuditStep {
  index: number;
  name: string;
  outcome: "ok" | "failed";
  detail: string;
}

export interface InstanceInfo {
  id: string;
  tale_id: string;
  state: "Launching" | "Running" | "Suspended" | "Deleted" | "Error";
  route_path: string;
  audit: AuditStep[];
}

const TOKEN_KEY = "talekit.token";

export class ApiClient {
  baseUrl: string;
  private token: string | null = null;
  private fetchImpl: typeof fetch;

  constructor(baseUrl: string, fetchImpl?: typeof fetch) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((...args) => globalThis.fetch(...args));
    try {
      this.token = globalThis.sessionStorage?.getItem(TOKEN_KEY) ?? null;
    } catch {
      this.token = null;
    }
  }

  get authenticated(): boolean {
    return this.token !== null;
  }

  setToken(token: string | null): void {
    this.token = token;
    try {
      if (token === null) globalThis.sessionStorage?.removeItem(TOKEN_KEY);
      else globalThis.sessionStorage?.setItem(TOKEN_KEY, token);
    } catch {
      // no sessionStorage (tests without DOM storage): in-memory only
    }
  }

  async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let code = "HttpError";
      let message = `${method} ${path} failed with ${resp.status}`;
      try {
        const doc = (await resp.json()) as { error?: { code: string; message: string } };
        if (doc.error) {
          code = doc.error.code;
          message = doc.error.message;
        }
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(code, message, resp.status);
    }
    return (await resp.json()) as T;
  }

  get<T>(path: string): Promise<T> {
    return this.request<T>("GET", path);
  }

  post<T>(path: string, body?: unknown): Promise<T> {
    return this.request<T>("POST", path, body);
  }

  // -- auth ---------------------------------------------------------------

  async login(issuer: string, subject: string, proof: string): Promise<void> {
    const doc = await this.post<{ token: string }>("/auth/token", {
      issuer,
      subject,
      proof,
    });
    this.setToken(doc.token);
  }

  // -- resources ------------------------------------------------------------

  async rootFolders(): Promise<NodeInfo[]> {
    const doc = await this.get<{ children: NodeInfo[] }>("/root");
    return doc.children;
  }

  async registerDataset(identifier: string): Promise<JobInfo> {
    const doc = await this.post<{ job: JobInfo }>("/dataset/register", { identifier });
    return doc.job;
  }

  async getJob(id: string): Promise<JobInfo> {
    const doc = await this.get<{ job: JobInfo }>(`/job/${id}`);
    return doc.job;
  }

  /**
   * Poll a job until it is terminal (the fallback when the event stream is
   * unavailable; 2 s in production, faster under test).
   */
  async watchJob(
    id: string,
    onUpdate: (job: JobInfo) => void,
    intervalMs = 2000,
  ): Promise<JobInfo> {
    for (;;) {
      const job = await this.getJob(id);
      onUpdate(job);
      if (job.status === "Done" || job.status === "Failed") return job;
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
  }

  async createRecipe(name: string, repoUrl: string, commitId: string): Promise<RecipeInfo> {
    const doc = await this.post<{ recipe: RecipeInfo }>("/recipe", {
      name,
      repo_url: repoUrl,
      commit_id: commitId,
    });
    return doc.recipe;
  }

  async buildImage(recipeId: string): Promise<{ image: ImageInfo; job: JobInfo }> {
    return this.post<{ image: ImageInfo; job: JobInfo }>("/image", { recipe_id: recipeId });
  }

  async listImages(): Promise<ImageInfo[]> {
    return (await this.get<{ images: ImageInfo[] }>("/image")).images;
  }

  async listTales(): Promise<TaleInfo[]> {
    return (await this.get<{ tales: TaleInfo[] }>("/tale")).tales;
  }

  async createTale(imageId: string, folderId: string, title: string): Promise<TaleInfo> {
    const doc = await this.post<{ tale: TaleInfo }>("/tale", {
      image_id: imageId,
      folder_id: folderId,
      metadata: { title },
    });
    return doc.tale;
  }

  async listInstances(): Promise<InstanceInfo[]> {
    return (await this.get<{ instances: InstanceInfo[] }>("/instance")).instances;
  }

  async launchInstance(taleId: string): Promise<InstanceInfo> {
    return (await this.post<{ instance: InstanceInfo }>("/instance", { tale_id: taleId }))
      .instance;
  }

  async suspendInstance(id: string): Promise<InstanceInfo> {
    return (await this.post<{ instance: InstanceInfo }>(`/instance/${id}/suspend`)).instance;
  }

  async resumeInstance(id: string): Promise<InstanceInfo> {
    return (await this.post<{ instance: InstanceInfo }>(`/instance/${id}/resume`)).instance;
  }

  async deleteInstance(id: string): Promise<void> {
    await this.request<{ deleted: string }>("DELETE", `/instance/${id}`);
  }
}
