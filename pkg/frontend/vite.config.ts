import { defineConfig } from "vitest/config";

export default defineConfig({
  build: {
    outDir: "dist",
    target: "es2020",
  },
  test: {
    environment: "jsdom",
    testTimeout: 30000,
    hookTimeout: 30000,
    // the leak test shells out to `vite build`; keep files sequential so
    // the CPU burst cannot starve the live-service session flow
    fileParallelism: false,
  },
});
