import { ApiClient } from "./api.js";
import { App } from "./app.js";

const client = new ApiClient("");
new App(client).start().catch((err) => {
  const line = document.getElementById("status-line");
  if (line) line.textContent = `failed to start: ${err}`;
});
