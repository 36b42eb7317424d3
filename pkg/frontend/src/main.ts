import { ApiClient } from "./api.js";
import { LabelApp } from "./app.js";

const root = document.getElementById("app");
if (root) {
  const app = new LabelApp(root, new ApiClient(""));
  void app.start();
}
