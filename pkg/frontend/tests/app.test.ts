import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ServiceClient } from "../src/api.js";
import { ChatApp } from "../src/app.js";
import type { StepResponse } from "../src/types.js";

const CANNED: StepResponse = {
  response: "you should try @m3 it is wonderful",
  recommendations: [
    { item: "m3", score: 0.61234 },
    { item: "m7", score: 0.21111 },
    { item: "m1", score: 0.09999 },
  ],
  reviews: [
    {
      item: "m0",
      snippet: "alan voss was superb the acting gripping .",
      review_id: 42,
      sentiment: 0.93,
      polarity: "positive",
    },
  ],
};

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

function stubService(payload: StepResponse = CANNED) {
  return vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
    const url = String(input);
    if (url.endsWith("/sessions") && init?.method === "POST") {
      return jsonResponse({ session_id: "s1" });
    }
    if (url.includes("/messages")) {
      return jsonResponse(payload);
    }
    if (url.includes("/recommendations")) {
      return jsonResponse({ recommendations: payload.recommendations });
    }
    return jsonResponse({ code: "not_found", message: "no route" }, 404);
  });
}

function freshApp(): ChatApp {
  document.body.innerHTML = '<div id="app"></div>';
  const app = new ChatApp(
    document.getElementById("app") as HTMLElement,
    new ServiceClient(""),
  );
  app.mount();
  return app;
}

beforeEach(() => {
  vi.stubGlobal("fetch", stubService());
});

afterEach(() => {
  vi.unstubAllGlobals();
  document.body.innerHTML = "";
});

describe("send_message", () => {
  it("auto-creates a session and renders both bubbles", async () => {
    const app = freshApp();
    await app.send("hi i loved silver harbor");

    const fetchMock = fetch as ReturnType<typeof vi.fn>;
    expect(String(fetchMock.mock.calls[0][0])).toBe("/sessions");
    expect(String(fetchMock.mock.calls[1][0])).toBe("/sessions/s1/messages");

    const bubbles = document.querySelectorAll(".bubble");
    expect(bubbles).toHaveLength(2);
    expect(bubbles[0].textContent).toBe("hi i loved silver harbor");
    expect(bubbles[0].className).toContain("user");
    expect(bubbles[1].textContent).toBe(CANNED.response);
    expect(bubbles[1].className).toContain("system");
  });

  it("renders a three-row recommendation panel in rank order", async () => {
    const app = freshApp();
    await app.send("hello");
    const rows = document.querySelectorAll(".rec-row");
    expect(rows).toHaveLength(3);
    expect(rows[0].textContent).toBe("m3 0.612");
    expect(rows[1].textContent).toBe("m7 0.211");
    expect(rows[2].textContent).toBe("m1 0.100");
  });

  it("renders one review snippet with provenance", async () => {
    const app = freshApp();
    await app.send("hello");
    const snippets = document.querySelectorAll(".snippet");
    expect(snippets).toHaveLength(1);
    expect(snippets[0].textContent).toContain("m0:");
    expect((snippets[0] as HTMLElement).dataset.reviewId).toBe("42");
  });

  it("reuses the session on later sends", async () => {
    const app = freshApp();
    await app.send("first");
    await app.send("second");
    const fetchMock = fetch as ReturnType<typeof vi.fn>;
    const sessionOpens = fetchMock.mock.calls.filter(
      (call) => String(call[0]) === "/sessions",
    );
    expect(sessionOpens).toHaveLength(1);
    expect(document.querySelectorAll(".bubble")).toHaveLength(4);
  });

  it("produces an identical DOM across two runs (snapshot stability)", async () => {
    const first = freshApp();
    await first.send("hi i loved silver harbor");
    const run1 = (document.getElementById("app") as HTMLElement).innerHTML;

    vi.stubGlobal("fetch", stubService());
    const second = freshApp();
    await second.send("hi i loved silver harbor");
    const run2 = (document.getElementById("app") as HTMLElement).innerHTML;

    expect(run2).toBe(run1);
    expect(run1).toMatchSnapshot();
  });

  it("disables send while a request is pending", async () => {
    let release: (value: Response) => void = () => {};
    const gate = new Promise<Response>((resolve) => (release = resolve));
    vi.stubGlobal(
      "fetch",
      vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
        const url = String(input);
        if (url.endsWith("/sessions")) return jsonResponse({ session_id: "s1" });
        return gate;
      }),
    );
    const app = freshApp();
    const inflight = app.send("slow message");
    await Promise.resolve();
    const button = document.querySelector(".send") as HTMLButtonElement;
    expect(app.isPending).toBe(true);
    expect(button.disabled).toBe(true);

    release(jsonResponse(CANNED));
    await inflight;
    expect(app.isPending).toBe(false);
    expect(button.disabled).toBe(false);
  });

  it("keeps the transcript and offers retry when the service fails", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn(async (input: RequestInfo | URL) => {
        const url = String(input);
        if (url.endsWith("/sessions")) return jsonResponse({ session_id: "s1" });
        return jsonResponse({ code: "boom", message: "backend down" }, 500);
      }),
    );
    const app = freshApp();
    await app.send("hello");
    expect(document.querySelectorAll(".bubble.user")).toHaveLength(1);
    const retry = document.querySelector(".retry") as HTMLButtonElement;
    expect(retry).not.toBeNull();
    expect(document.querySelector(".error-message")?.textContent).toContain(
      "backend down",
    );

    // service recovers; retry resends the same text and clears the error row
    vi.stubGlobal("fetch", stubService());
    retry.click();
    await vi.waitFor(() =>
      expect(document.querySelectorAll(".bubble.system")).toHaveLength(1),
    );
    expect(document.querySelector(".retry")).toBeNull();
    expect(document.querySelectorAll(".bubble.user")).toHaveLength(2);
  });
});

describe("inspect_review", () => {
  it("opens a modal with the matching review and polarity badge", async () => {
    const app = freshApp();
    await app.send("hello");
    (document.querySelector(".snippet") as HTMLButtonElement).click();

    const modal = document.querySelector(".modal") as HTMLElement;
    expect(modal).not.toBeNull();
    expect(modal.dataset.reviewId).toBe("42");
    expect(modal.querySelector(".full-snippet")?.textContent).toBe(
      CANNED.reviews[0].snippet,
    );
    const badge = modal.querySelector(".badge") as HTMLElement;
    expect(badge.textContent).toBe("positive");
    expect(badge.className).toContain("positive");
  });

  it("escape dismisses the modal", async () => {
    const app = freshApp();
    await app.send("hello");
    (document.querySelector(".snippet") as HTMLButtonElement).click();
    expect(document.querySelector(".modal")).not.toBeNull();

    document.dispatchEvent(new KeyboardEvent("keydown", { key: "Escape" }));
    expect(document.querySelector(".modal")).toBeNull();
  });

  it("renders no snippet affordance when a turn has no reviews", async () => {
    vi.stubGlobal("fetch", stubService({ ...CANNED, reviews: [] }));
    const app = freshApp();
    await app.send("hello");
    expect(document.querySelector(".snippet")).toBeNull();
    expect(document.querySelector(".reviews")).toBeNull();
  });
});

describe("transcript invariants", () => {
  it("is append-only and stable across sends", async () => {
    const app = freshApp();
    await app.send("one");
    const firstHtml = document.querySelector(".turn")?.outerHTML;
    await app.send("two");
    expect(document.querySelector(".turn")?.outerHTML).toBe(firstHtml);
    expect(app.transcriptTurns.map((t) => t.role)).toEqual([
      "user", "system", "user", "system",
    ]);
  });

  it("displays service numbers verbatim at three decimals", async () => {
    vi.stubGlobal(
      "fetch",
      stubService({
        ...CANNED,
        recommendations: [
          { item: "a", score: 0.5 },
          { item: "b", score: 0.5 },
          { item: "c", score: 0.123456 },
        ],
      }),
    );
    const app = freshApp();
    await app.send("hello");
    const rows = [...document.querySelectorAll(".rec-row")].map(
      (r) => r.textContent,
    );
    expect(rows).toEqual(["a 0.500", "b 0.500", "c 0.123"]);
  });
});
