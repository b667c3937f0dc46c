import { ServiceClient } from "./api.js";
import type { ChatTurn, ReviewSnippet } from "./types.js";

/** Chat client: transcript, recommendation panel, and review provenance.
 *
 * The client renders exactly what the service returns (scores shown to three
 * decimals, ties in service order) and performs no inference of its own.
 * One request is in flight per session at most: the send control is disabled
 * while a message is pending. A failed send leaves the transcript intact and
 * offers an inline retry.
 */
export class ChatApp {
  private sessionId: string | null = null;
  private pending = false;
  private readonly turns: ChatTurn[] = [];

  private transcript!: HTMLElement;
  private input!: HTMLInputElement;
  private sendButton!: HTMLButtonElement;
  private modalHost!: HTMLElement;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ServiceClient,
  ) {}

  mount(): void {
    this.root.innerHTML = `
      <div class="chat">
        <ol class="transcript" aria-label="conversation transcript"></ol>
        <form class="composer">
          <input type="text" name="message" placeholder="Ask for a movie..."
                 aria-label="message text" />
          <button type="submit" class="send">Send</button>
        </form>
        <div class="modal-host"></div>
      </div>`;
    this.transcript = this.root.querySelector(".transcript") as HTMLElement;
    this.input = this.root.querySelector("input") as HTMLInputElement;
    this.sendButton = this.root.querySelector(".send") as HTMLButtonElement;
    this.modalHost = this.root.querySelector(".modal-host") as HTMLElement;

    const form = this.root.querySelector("form") as HTMLFormElement;
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      const text = this.input.value.trim();
      if (text) {
        this.input.value = "";
        void this.send(text);
      }
    });
    document.addEventListener("keydown", (event) => {
      if (event.key === "Escape") this.closeModal();
    });
  }

  get transcriptTurns(): readonly ChatTurn[] {
    return this.turns;
  }

  get isPending(): boolean {
    return this.pending;
  }

  /** Send one message: session auto-created on first use. */
  async send(text: string): Promise<void> {
    if (this.pending) return;
    this.setPending(true);
    this.appendTurn({ role: "user", text, recommendations: [], reviews: [] });
    try {
      if (this.sessionId === null) {
        this.sessionId = await this.client.openSession();
      }
      const reply = await this.client.sendMessage(this.sessionId, text);
      this.appendTurn({
        role: "system",
        text: reply.response,
        recommendations: reply.recommendations,
        reviews: reply.reviews,
      });
    } catch (error) {
      this.renderError(text, error instanceof Error ? error.message : String(error));
    } finally {
      this.setPending(false);
    }
  }

  private setPending(value: boolean): void {
    this.pending = value;
    this.sendButton.disabled = value;
  }

  /** Transcript is append-only; existing entries are never re-ordered. */
  private appendTurn(turn: ChatTurn): void {
    this.turns.push(turn);
    this.transcript.appendChild(this.renderTurn(turn, this.turns.length - 1));
  }

  private renderTurn(turn: ChatTurn, index: number): HTMLElement {
    const li = document.createElement("li");
    li.className = `turn ${turn.role}`;
    li.dataset.index = String(index);

    const bubble = document.createElement("div");
    bubble.className = `bubble ${turn.role}`;
    bubble.textContent = turn.text;
    li.appendChild(bubble);

    if (turn.role === "system" && turn.recommendations.length) {
      li.appendChild(this.renderRecommendations(turn));
    }
    if (turn.role === "system" && turn.reviews.length) {
      li.appendChild(this.renderReviews(turn));
    }
    return li;
  }

  private renderRecommendations(turn: ChatTurn): HTMLElement {
    const panel = document.createElement("aside");
    panel.className = "recommendations";
    panel.setAttribute("aria-label", "recommendations");
    const list = document.createElement("ol");
    for (const rec of turn.recommendations) {
      const row = document.createElement("li");
      row.className = "rec-row";
      row.textContent = `${rec.item} ${rec.score.toFixed(3)}`;
      list.appendChild(row);
    }
    panel.appendChild(list);
    return panel;
  }

  private renderReviews(turn: ChatTurn): HTMLElement {
    const panel = document.createElement("aside");
    panel.className = "reviews";
    panel.setAttribute("aria-label", "review provenance");
    for (const review of turn.reviews) {
      const button = document.createElement("button");
      button.type = "button";
      button.className = "snippet";
      button.dataset.reviewId = String(review.review_id);
      button.textContent = `${review.item}: ${review.snippet}`;
      button.addEventListener("click", () => this.openReviewModal(review));
      panel.appendChild(button);
    }
    return panel;
  }

  private renderError(text: string, message: string): void {
    const row = document.createElement("li");
    row.className = "turn error";
    const label = document.createElement("span");
    label.className = "error-message";
    label.textContent = `Could not send (${message}).`;
    const retry = document.createElement("button");
    retry.type = "button";
    retry.className = "retry";
    retry.textContent = "Retry";
    retry.addEventListener("click", () => {
      row.remove();
      void this.send(text);
    });
    row.appendChild(label);
    row.appendChild(retry);
    this.transcript.appendChild(row);
  }

  openReviewModal(review: ReviewSnippet): void {
    this.closeModal();
    const modal = document.createElement("div");
    modal.className = "modal";
    modal.setAttribute("role", "dialog");
    modal.setAttribute("aria-modal", "true");
    modal.dataset.reviewId = String(review.review_id);
    modal.innerHTML = `
      <div class="modal-body">
        <h2>Review of ${review.item}</h2>
        <span class="badge ${review.polarity}">${review.polarity}</span>
        <p class="full-snippet"></p>
        <button type="button" class="close">Close</button>
      </div>`;
    (modal.querySelector(".full-snippet") as HTMLElement).textContent =
      review.snippet;
    (modal.querySelector(".close") as HTMLButtonElement).addEventListener(
      "click", () => this.closeModal(),
    );
    this.modalHost.appendChild(modal);
  }

  closeModal(): void {
    this.modalHost.innerHTML = "";
  }
}
