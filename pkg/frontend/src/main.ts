import { ServiceClient } from "./api.js";
import { ChatApp } from "./app.js";

declare global {
  interface Window {
    REVCORE_BASE_URL?: string;
  }
}

const root = document.getElementById("app");
if (root) {
  const base = window.REVCORE_BASE_URL ?? "";
  new ChatApp(root, new ServiceClient(base)).mount();
}
