#!/usr/bin/env node
/**
 * jvm-shim [--agent "mode=...,..."] scenario.json
 *
 * Runs a simulated class-loading scenario.  Without --agent every class just
 * executes.  With a guard agent each class is verified first and a DENY
 * halts the process immediately (exit 13) so the denied class's side effect
 * never happens.  With a dump agent events are appended to a .bomitrc trace.
 */

import fs from "node:fs";
import path from "node:path";

import { reasonName } from "./frames.js";
import { AgentConfig, parseAgentArgs, runScenario, Scenario, ShimError } from "./shim.js";

function usage(): never {
  process.stderr.write('usage: jvm-shim [--agent "mode=guard,endpoint=HOST:PORT"] scenario.json\n');
  process.exit(1);
}

function loadScenario(file: string): Scenario {
  const doc = JSON.parse(fs.readFileSync(file, "utf8")) as Scenario;
  if (!Array.isArray(doc.classes)) {
    throw new ShimError(`${file}: scenario needs a "classes" array`);
  }
  const base = path.dirname(path.resolve(file));
  // file and marker paths are relative to the scenario document
  for (const cls of doc.classes) {
    cls.file = path.resolve(base, cls.file);
    if (cls.marker) {
      cls.marker = path.resolve(base, cls.marker);
    }
  }
  return doc;
}

async function main(argv: string[]): Promise<number> {
  let config: AgentConfig | null = null;
  let scenarioFile: string | null = null;
  for (let i = 0; i < argv.length; i += 1) {
    if (argv[i] === "--agent") {
      i += 1;
      if (i >= argv.length) {
        usage();
      }
      config = parseAgentArgs(argv[i]);
    } else if (scenarioFile === null) {
      scenarioFile = argv[i];
    } else {
      usage();
    }
  }
  if (scenarioFile === null) {
    usage();
  }

  const scenario = loadScenario(scenarioFile);
  const result = await runScenario(
    scenario,
    config,
    (line) => process.stdout.write(`${line}\n`),
    (line) => process.stderr.write(`${line}\n`),
  );
  if (result.denied) {
    // written synchronously so the line survives the hard halt below
    fs.writeSync(2, `[DENIED] ${result.denied.name}: ${reasonName(result.denied.reply)}\n`);
  }
  return result.status;
}

main(process.argv.slice(2)).then(
  (status) => process.exit(status),
  (err) => {
    fs.writeSync(2, `shim: ${err instanceof Error ? err.message : String(err)}\n`);
    process.exit(1);
  },
);
