import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    // guard/dump suites spawn the Python watchdog and indexer
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
