import { bootstrap } from "./app.js";

const mount = document.getElementById("app");
if (mount) void bootstrap(mount);
