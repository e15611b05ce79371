#!/usr/bin/env node
/**
 * latune: inspect tuner reports, run tunes, and lint emitted kernels.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { loadReport, renderTable, selectedVariant } from "./report.js";
import { checkKernels, tune } from "./runner.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command(
      "report <file>",
      "validate and pretty-print a tuner report",
      (y) =>
        y
          .positional("file", { type: "string", demandOption: true })
          .option("ghz", { type: "number", describe: "clock rate for f/c" }),
    )
    .command(
      "bench",
      "run a tune through the generator CLI and summarize it",
      (y) =>
        y
          .option("input", { type: "string", demandOption: true })
          .option("n", { type: "string", demandOption: true })
          .option("cc", { type: "string" })
          .option("reps", { type: "number", default: 3 })
          .option("mode", {
            choices: ["scalar", "nu", "both"] as const,
            default: "scalar" as const,
          })
          .option("ghz", { type: "number" })
          .option("out", { type: "string" }),
    )
    .command(
      "check",
      "compile emitted kernels with warnings as errors",
      (y) =>
        y
          .option("dir", { type: "string", demandOption: true })
          .option("cc", { type: "string", default: "cc" }),
    )
    .demandCommand(1)
    .strict()
    .parse();

  const command = argv._[0];

  if (command === "report") {
    const report = loadReport(argv.file as string);
    console.log(renderTable(report, argv.ghz as number | undefined));
    const chosen = selectedVariant(report);
    if (chosen) console.log(`selected: ${chosen.id}`);
    return 0;
  }

  if (command === "bench") {
    const sizes = (argv.n as string).split(",").map(Number);
    const { report } = tune({
      input: argv.input as string,
      n: sizes,
      cc: argv.cc as string | undefined,
      reps: argv.reps as number,
      mode: argv.mode as "scalar" | "nu" | "both",
      outDir: argv.out as string | undefined,
    });
    console.log(renderTable(report, argv.ghz as number | undefined));
    const chosen = selectedVariant(report);
    if (chosen) {
      console.log(`selected: ${chosen.id}`);
    } else if (argv.cc) {
      console.error("no variant was selected");
      return 1;
    }
    return 0;
  }

  // check
  const results = checkKernels(argv.dir as string, argv.cc as string);
  for (const r of results) {
    console.log(`${r.ok ? "ok  " : "FAIL"} ${r.file}`);
    if (!r.ok) console.error(r.stderr);
  }
  return results.every((r) => r.ok) && results.length > 0 ? 0 : 1;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err?.message ?? err));
    process.exit(1);
  },
);
