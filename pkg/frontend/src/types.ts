// Wire protocol types, mirroring the server's JSON frames.

export type WireMessage = {
  type: string
  session_id: string
  t: number
  payload: Record<string, unknown>
}

export type AuxReason = 'remote_speaking' | 'translating' | 'none'

export type StageName = 'Speaking' | 'Waiting' | 'Viewing' | 'Learning' | 'Idle'

export type ParticipantInfo = {
  id: string
  native_language: string
  foreign_language: string
}

export function wire(
  type: string,
  sessionId: string,
  payload: Record<string, unknown>,
  t?: number,
): WireMessage {
  return { type, session_id: sessionId, t: t ?? 0, payload }
}
