import { defineConfig } from "vitest/config";

// Contract tests drive a live negotiation service; opening a session
// builds the bundled model, so generous timeouts are intentional.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    testTimeout: 240_000,
    hookTimeout: 240_000,
  },
});
