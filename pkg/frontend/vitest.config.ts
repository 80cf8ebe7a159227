import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    globals: true,
    environment: "node",
    // The service round trips in the loop-closure test dominate its runtime.
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
