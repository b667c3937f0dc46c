/** Wire types mirroring the recommendation service JSON schema. */

export interface Recommendation {
  item: string;
  score: number;
}

export interface ReviewSnippet {
  item: string;
  snippet: string;
  review_id: number;
  sentiment: number;
  polarity: "positive" | "negative";
}

export interface StepResponse {
  response: string;
  recommendations: Recommendation[];
  reviews: ReviewSnippet[];
}

export interface ServiceError {
  code: string;
  message: string;
}

export interface ChatTurn {
  role: "user" | "system";
  text: string;
  recommendations: Recommendation[];
  reviews: ReviewSnippet[];
}
