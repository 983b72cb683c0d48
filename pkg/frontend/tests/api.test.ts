import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function stubFetch(
  handler: (url: string, init?: RequestInit) => { status: number; body: unknown },
): typeof fetch {
  return (async (input: RequestInfo | URL, init?: RequestInit) => {
    const { status, body } = handler(String(input), init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }) as typeof fetch;
}

describe("ApiClient", () => {
  beforeEach(() => sessionStorage.clear());

  it("parses the error envelope into ApiError with the server's code", async () => {
    const client = new ApiClient(
      "http://api.test",
      stubFetch(() => ({
        status: 404,
        body: { error: { code: "UnknownNode", message: "no such node" } },
      })),
    );
    const failure = await client.get("/folder/x").catch((e) => e);
    expect(failure).toBeInstanceOf(ApiError);
    expect((failure as ApiError).code).toBe("UnknownNode");
    expect((failure as ApiError).status).toBe(404);
    expect((failure as ApiError).message).toBe("no such node");
  });

  it("sends the token as a bearer header only, never in the URL", async () => {
    const seen: { url: string; auth: string | undefined }[] = [];
    const client = new ApiClient(
      "http://api.test",
      stubFetch((url, init) => {
        const headers = (init?.headers ?? {}) as Record<string, string>;
        seen.push({ url, auth: headers["authorization"] });
        return { status: 200, body: { children: [] } };
      }),
    );
    client.setToken("sekrit-token-value");
    await client.rootFolders();
    expect(seen[0].auth).toBe("Bearer sekrit-token-value");
    expect(seen[0].url).not.toContain("sekrit");
  });

  it("persists the token to sessionStorage and restores it", async () => {
    const first = new ApiClient("http://api.test", stubFetch(() => ({ status: 200, body: {} })));
    first.setToken("persisted-token");
    const second = new ApiClient("http://api.test", stubFetch(() => ({ status: 200, body: {} })));
    expect(second.authenticated).toBe(true);
  });

  it("stores the token after login", async () => {
    const client = new ApiClient(
      "http://api.test",
      stubFetch((url) =>
        url.endsWith("/auth/token")
          ? { status: 200, body: { token: "fresh-token" } }
          : { status: 200, body: {} },
      ),
    );
    await client.login("local", "alice", "pw");
    expect(client.authenticated).toBe(true);
    expect(sessionStorage.getItem("talekit.token")).toBe("fresh-token");
  });

  it("watchJob polls until the job is terminal", async () => {
    let calls = 0;
    const client = new ApiClient(
      "http://api.test",
      stubFetch(() => {
        calls += 1;
        const status = calls < 3 ? "Running" : "Done";
        return {
          status: 200,
          body: { job: { id: "j", status, progress: calls * 33, events: [], result: {} } },
        };
      }),
    );
    const snapshots: string[] = [];
    const final = await client.watchJob("j", (job) => snapshots.push(job.status), 1);
    expect(final.status).toBe("Done");
    expect(snapshots).toEqual(["Running", "Running", "Done"]);
  });
});
