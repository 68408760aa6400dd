import fs from "node:fs";
import path from "node:path";

import { beforeAll, describe, expect, it } from "vitest";

import {
  Fixtures,
  makeFixtures,
  runShim,
  startWatch,
  writeScenario,
} from "./helpers.js";

let fx: Fixtures;

beforeAll(async () => {
  fx = await makeFixtures();
});

function scenarioDir(tag: string): string {
  const dir = path.join(fx.root, tag);
  fs.mkdirSync(dir, { recursive: true });
  return dir;
}

describe("guard mode", () => {
  it("is transparent when every class is allowlisted", async () => {
    const dir = scenarioDir("clean");
    const classes = fx.fleet.map(([name, file], i) => ({
      name,
      file,
      marker: path.join(dir, `m${i}.marker`),
    }));
    const scenario = writeScenario(path.join(dir, "scenario.json"), classes);

    const plain = await runShim([scenario]);
    expect(plain.code).toBe(0);

    const watch = await startWatch(fx.bomi);
    let guarded;
    try {
      guarded = await runShim(["--agent", `mode=guard,endpoint=${watch.endpoint}`, scenario]);
    } finally {
      await watch.stop();
    }
    expect(guarded.code).toBe(0);
    expect(guarded.out).toBe(plain.out);
    for (const cls of classes) {
      expect(fs.existsSync(cls.marker)).toBe(true);
    }
  });

  it("halts before an injected class's side effect runs", async () => {
    const dir = scenarioDir("attack");
    const [main, helper, proxy] = fx.fleet;
    const evilMarker = path.join(dir, "evil.marker");
    const tailMarker = path.join(dir, "tail.marker");
    const scenario = writeScenario(path.join(dir, "scenario.json"), [
      { name: main[0], file: main[1], marker: path.join(dir, "ok0.marker") },
      { name: helper[0], file: helper[1], marker: path.join(dir, "ok1.marker") },
      { name: "com/evil/xExportObject", file: fx.evil, marker: evilMarker },
      { name: proxy[0], file: proxy[1], marker: tailMarker },
    ]);

    const watch = await startWatch(fx.bomi);
    let res;
    try {
      res = await runShim(["--agent", `mode=guard,endpoint=${watch.endpoint}`, scenario]);
    } finally {
      await watch.stop();
    }
    expect(res.code).toBe(13);
    expect(res.err).toContain("[DENIED] com/evil/xExportObject: NOT_ALLOWLISTED");
    expect(fs.existsSync(path.join(dir, "ok0.marker"))).toBe(true);
    expect(fs.existsSync(path.join(dir, "ok1.marker"))).toBe(true);
    expect(fs.existsSync(evilMarker)).toBe(false);
    expect(fs.existsSync(tailMarker)).toBe(false);
  });

  it("flags a known class whose bytes changed as TAMPERED", async () => {
    const dir = scenarioDir("tampered");
    const marker = path.join(dir, "t.marker");
    const scenario = writeScenario(path.join(dir, "scenario.json"), [
      { name: "app/Main", file: fx.tamperedMain, marker },
    ]);

    const watch = await startWatch(fx.bomi);
    let res;
    try {
      res = await runShim(["--agent", `mode=guard,endpoint=${watch.endpoint}`, scenario]);
    } finally {
      await watch.stop();
    }
    expect(res.code).toBe(13);
    expect(res.err).toContain("[DENIED] app/Main: TAMPERED");
    expect(fs.existsSync(marker)).toBe(false);
  });

  it("fails closed at startup when the watchdog is unreachable", async () => {
    const dir = scenarioDir("unreachable");
    const marker = path.join(dir, "m.marker");
    const scenario = writeScenario(path.join(dir, "scenario.json"), [
      { name: fx.fleet[0][0], file: fx.fleet[0][1], marker },
    ]);
    const res = await runShim(["--agent", "mode=guard,endpoint=127.0.0.1:9", scenario]);
    expect(res.code).toBe(1);
    expect(res.err).toContain("cannot reach watchdog");
    expect(fs.existsSync(marker)).toBe(false);
  });

  it("passes through on failopen=true when the watchdog is unreachable", async () => {
    const dir = scenarioDir("failopen");
    const marker = path.join(dir, "m.marker");
    const scenario = writeScenario(path.join(dir, "scenario.json"), [
      { name: fx.fleet[0][0], file: fx.fleet[0][1], marker },
    ]);
    const res = await runShim([
      "--agent",
      "mode=guard,endpoint=127.0.0.1:9,failopen=true",
      scenario,
    ]);
    expect(res.code).toBe(0);
    expect(res.err).toContain("failopen=true, passing through");
    expect(fs.existsSync(marker)).toBe(true);
  });

  it("never re-sends an already-verified definition", async () => {
    const dir = scenarioDir("resend");
    const [main] = fx.fleet;
    const scenario = writeScenario(
      path.join(dir, "scenario.json"),
      [0, 1, 2].map((i) => ({
        name: main[0],
        file: main[1],
        marker: path.join(dir, `m${i}.marker`),
      })),
    );

    const log = path.join(dir, "incidents.ndjson");
    const watch = await startWatch(fx.bomi, ["--incident-log", log]);
    let res;
    try {
      res = await runShim(["--agent", `mode=guard,endpoint=${watch.endpoint}`, scenario]);
    } finally {
      await watch.stop();
    }
    expect(res.code).toBe(0);
    for (const i of [0, 1, 2]) {
      expect(fs.existsSync(path.join(dir, `m${i}.marker`))).toBe(true);
    }
    // the watchdog saw exactly one frame for the three definitions
    const lines = fs.readFileSync(log, "utf8").split("\n").filter((l) => l !== "");
    expect(lines).toHaveLength(1);
    expect(JSON.parse(lines[0]).class).toBe("app/Main");
  });
});
