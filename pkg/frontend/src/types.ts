/** Wire types for the negotiation service, validated with zod.
 *
 * Every payload carries a `schema` field; the console refuses to render
 * responses from a protocol version it does not understand.  All numbers
 * shown in the UI come straight out of these parsed payloads — the console
 * never recomputes a probability.
 */

import { z } from "zod";

export const SCHEMA_VERSION = 1;

const schemaField = z.literal(SCHEMA_VERSION);

export const EnvironmentSchema = z.object({
  bounds: z.tuple([z.number(), z.number(), z.number(), z.number()]),
  regions: z.record(z.array(z.array(z.tuple([z.number(), z.number()])))),
});
export type EnvironmentView = z.infer<typeof EnvironmentSchema>;

export const UpdateRuleSchema = z
  .object({
    kind: z.string(),
    j: z.number().int(),
    satisfied_up_to: z.number().int().optional(),
    clause: z.unknown().optional(),
    index: z.number().int().nullish(),
    p_plus: z.number().nullish(),
  })
  .passthrough();
export type UpdateRuleView = z.infer<typeof UpdateRuleSchema>;

export const CandidateSchema = z.object({
  id: z.string(),
  rule: UpdateRuleSchema,
  description: z.string(),
  lower: z.number(),
  upper: z.number(),
  delta: z.number(),
  basis: z.number().int(),
});
export type Candidate = z.infer<typeof CandidateSchema>;

export const FormulaBlockSchema = z.object({
  phi: z.array(z.string()),
  psi: z.array(z.string()),
  p: z.number(),
  strict: z.boolean(),
});
export type FormulaBlock = z.infer<typeof FormulaBlockSchema>;

export const DeploymentSchema = z.object({
  stage: z.number().int(),
  seed: z.number().int().nullable(),
  pose: z.tuple([z.number(), z.number(), z.number()]),
  satisfied_up_to: z.number().int(),
  cursor: z.number().int(),
  disc_radius: z.number(),
  trajectory: z.array(z.tuple([z.number(), z.number()])),
});
export type Deployment = z.infer<typeof DeploymentSchema>;

export const SessionViewSchema = z.object({
  schema: schemaField,
  id: z.string(),
  phase: z.enum(["Negotiating", "Deployed", "Renegotiating", "Closed"]),
  revision: z.number().int(),
  formula: z.string(),
  lower: z.number(),
  upper: z.number(),
  states: z.number().int(),
  stages_total: z.number().int(),
  satisfied: z.boolean().optional(),
  environment: EnvironmentSchema,
  formula_blocks: z.array(FormulaBlockSchema),
  candidates: z.array(CandidateSchema),
  deployment: DeploymentSchema.nullable(),
});
export type SessionView = z.infer<typeof SessionViewSchema>;

export const CandidateListSchema = z.object({
  schema: schemaField,
  revision: z.number().int(),
  candidates: z.array(CandidateSchema),
});
export type CandidateList = z.infer<typeof CandidateListSchema>;

export const StepReportSchema = z
  .object({
    schema: schemaField,
    stage: z.number().int(),
    u_index: z.number().int().nullable(),
    u: z.number(),
    eps: z.number(),
    cell: z.number().int(),
    pose: z.tuple([z.number(), z.number(), z.number()]),
    cursor: z.number().int(),
    satisfied_up_to: z.number().int(),
    done: z.boolean(),
    phase: z.string(),
    lower: z.number().optional(),
    upper: z.number().optional(),
    satisfied: z.boolean().optional(),
  })
  .passthrough();
export type StepReport = z.infer<typeof StepReportSchema>;

export const ErrorDetailSchema = z.object({
  detail: z.object({ schema: z.number(), error: z.string() }),
});
